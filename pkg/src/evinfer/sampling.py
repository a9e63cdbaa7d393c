"""Negative sampling for identifier training sets.

Every gold evidence sentence becomes one POSITIVE sample; for each positive,
``k_negatives`` sentences are drawn uniformly without replacement from the
same article's non-evidence sentences for that prompt (all of them when
fewer exist). Draws use a per-prompt RNG stream derived from (seed,
prompt_id), so results do not depend on corpus iteration order.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Corpus
from .errors import EvinferError
from .segmentation import Sentence, SentenceLabeling

logger = logging.getLogger(__name__)

#: Ratios used for sweep parity with the reference experiments.
SWEEP_RATIOS = (1, 2, 4, 8, 16)


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class SamplingConfig:
    k_negatives: int
    seed: int

    def __post_init__(self):
        if self.k_negatives < 1:
            raise EvinferError("MALFORMED_RECORD", f"k_negatives must be >= 1, got {self.k_negatives}")


@dataclass(frozen=True)
class TrainingSample:
    prompt_id: str
    sentence_index: int
    polarity: Polarity


def _prompt_rng(seed: int, prompt_id: str) -> np.random.Generator:
    digest = hashlib.blake2b(f"{seed}:{prompt_id}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


def build_identifier_dataset(
    corpus: Corpus,
    labelings: Mapping[str, SentenceLabeling],
    sentence_index: Mapping[str, Sequence[Sentence]],
    config: SamplingConfig,
    prompt_ids: Sequence[str] | None = None,
) -> list[TrainingSample]:
    """Training samples for the evidence identifier over the given prompts.

    ``prompt_ids`` defaults to every prompt in the corpus; prompts with an
    INVALID gold annotation are skipped. Output is sorted by prompt id with
    positives before their negatives, and is reproducible given the seed.
    """
    if prompt_ids is None:
        prompt_ids = sorted(corpus.prompts)
    samples: list[TrainingSample] = []
    for pid in sorted(prompt_ids):
        if not corpus.gold_label(pid).is_answer():
            continue
        if pid not in labelings:
            raise EvinferError("MISSING_LABELING", f"no sentence labeling for prompt {pid}")
        evidence = labelings[pid].evidence_indices
        article_id = corpus.prompts[pid].article_id
        all_indices = [s.index for s in sentence_index[article_id]]
        negatives_pool = np.array([i for i in all_indices if i not in evidence], dtype=np.int64)
        rng = _prompt_rng(config.seed, pid)
        for positive_index in sorted(evidence):
            samples.append(TrainingSample(pid, positive_index, Polarity.POSITIVE))
            if negatives_pool.size == 0:
                logger.warning(
                    "NO_NEGATIVES_AVAILABLE: prompt %s has no non-evidence sentences", pid
                )
                continue
            take = min(config.k_negatives, negatives_pool.size)
            drawn = rng.choice(negatives_pool, size=take, replace=False)
            samples.extend(
                TrainingSample(pid, int(idx), Polarity.NEGATIVE) for idx in drawn
            )
    return samples


def save_samples(samples: Sequence[TrainingSample], path: str | Path) -> Path:
    """Export samples to JSONL for offline training; byte-deterministic."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(
                json.dumps(
                    {
                        "prompt_id": s.prompt_id,
                        "sentence_index": s.sentence_index,
                        "polarity": s.polarity.value,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return path


def load_samples(path: str | Path) -> list[TrainingSample]:
    path = Path(path)
    if not path.is_file():
        raise EvinferError("MISSING_FILE", f"sample file not found: {path}")
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                samples.append(
                    TrainingSample(rec["prompt_id"], rec["sentence_index"], Polarity(rec["polarity"]))
                )
    return samples
