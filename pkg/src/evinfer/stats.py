"""Descriptive corpus statistics and stage verification accuracies.

Definitions that the corpus release leaves open are pinned here:

* ICO uniqueness is the share of prompt instances whose normalized string
  (case-folded, whitespace-collapsed, surrounding punctuation stripped)
  occurs in exactly one prompt.
* The multi-sentence span rate is computed over generation- and
  annotation-stage spans; verification spans are adjudications, not fresh
  rationales, and are excluded.
* A prompt counts as abstract-answerable when at least one of its answer
  annotations has every span ending at or before the abstract boundary.
* Two rationales agree when their span sets overlap by at least one
  character; stage answer accuracy is label equality against the
  verification record.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass

from .corpus import ANSWER_LABELS, Annotation, Corpus, Split, Stage
from .errors import EvinferError
from .segmentation import SentenceSplitter, build_sentence_index


@dataclass(frozen=True)
class CorpusStats:
    n_prompts: dict[Split, int]
    n_articles: dict[Split, int]
    label_counts: dict[Split, tuple[int, int, int]]
    prompts_per_article_mean: float
    pct_unique_interventions: float
    pct_unique_comparators: float
    pct_unique_outcomes: float
    pct_multi_sentence_spans: float
    pct_abstract_answerable: float
    pct_articles_with_label_diversity: float

    @property
    def total_prompts(self) -> int:
        return sum(self.n_prompts.values())

    @property
    def total_articles(self) -> int:
        return sum(self.n_articles.values())

    @property
    def total_label_counts(self) -> tuple[int, int, int]:
        return tuple(
            sum(self.label_counts[s][i] for s in Split) for i in range(3)
        )  # type: ignore[return-value]

    def to_dict(self) -> dict:
        return {
            "n_prompts": {s.value: self.n_prompts[s] for s in Split},
            "n_articles": {s.value: self.n_articles[s] for s in Split},
            "label_counts": {s.value: list(self.label_counts[s]) for s in Split},
            "prompts_per_article_mean": self.prompts_per_article_mean,
            "pct_unique_interventions": self.pct_unique_interventions,
            "pct_unique_comparators": self.pct_unique_comparators,
            "pct_unique_outcomes": self.pct_unique_outcomes,
            "pct_multi_sentence_spans": self.pct_multi_sentence_spans,
            "pct_abstract_answerable": self.pct_abstract_answerable,
            "pct_articles_with_label_diversity": self.pct_articles_with_label_diversity,
        }


def normalize_ico(value: str) -> str:
    """Case-fold, collapse whitespace, strip surrounding punctuation."""
    collapsed = " ".join(value.split()).casefold()
    return collapsed.strip(string.punctuation + " ")


def _pct_unique(values: list[str]) -> float:
    normalized = [normalize_ico(v) for v in values]
    counts = Counter(normalized)
    unique = sum(1 for v in normalized if counts[v] == 1)
    return 100.0 * unique / len(values)


def _rationale_spans(anns: list[Annotation]) -> list:
    return [span for a in anns if a.stage is not Stage.VERIFICATION for span in a.spans]


def corpus_stats(corpus: Corpus, segmenter: SentenceSplitter | None = None) -> CorpusStats:
    """All descriptive statistics for one corpus."""
    if not corpus.prompts:
        raise EvinferError("EMPTY_CORPUS", "cannot compute statistics of an empty corpus")

    n_prompts = {s: 0 for s in Split}
    n_articles = {s: 0 for s in Split}
    label_counts = {s: [0, 0, 0] for s in Split}
    class_index = {int(lbl): i for i, lbl in enumerate(ANSWER_LABELS)}

    for aid, split in corpus.split.items():
        n_articles[split] += 1
    labels_by_article: dict[str, set[int]] = {}
    for pid, prompt in corpus.prompts.items():
        split = corpus.split[prompt.article_id]
        n_prompts[split] += 1
        gold = corpus.gold_label(pid)
        if gold.is_answer():
            label_counts[split][class_index[int(gold)]] += 1
            labels_by_article.setdefault(prompt.article_id, set()).add(int(gold))

    total_prompts = sum(n_prompts.values())
    total_articles = sum(n_articles.values())

    diverse = sum(1 for labels in labels_by_article.values() if len(labels) >= 2)

    multi, total_spans = 0, 0
    sentence_index = build_sentence_index(corpus, segmenter)
    for pid in corpus.prompts:
        sentences = sentence_index[corpus.prompts[pid].article_id]
        for span in _rationale_spans(corpus.annotations[pid]):
            total_spans += 1
            touched = sum(
                1
                for s in sentences
                if span.char_start < s.char_end and s.char_start < span.char_end
            )
            multi += touched > 1

    abstract_answerable = 0
    for pid, prompt in corpus.prompts.items():
        boundary = corpus.articles[prompt.article_id].abstract_end
        for ann in corpus.annotations[pid]:
            if ann.label.is_answer() and ann.spans and all(
                span.char_end <= boundary for span in ann.spans
            ):
                abstract_answerable += 1
                break

    return CorpusStats(
        n_prompts=n_prompts,
        n_articles=n_articles,
        label_counts={s: tuple(label_counts[s]) for s in Split},  # type: ignore[misc]
        prompts_per_article_mean=total_prompts / total_articles,
        pct_unique_interventions=_pct_unique([p.intervention for p in corpus.prompts.values()]),
        pct_unique_comparators=_pct_unique([p.comparator for p in corpus.prompts.values()]),
        pct_unique_outcomes=_pct_unique([p.outcome for p in corpus.prompts.values()]),
        pct_multi_sentence_spans=100.0 * multi / total_spans if total_spans else 0.0,
        pct_abstract_answerable=100.0 * abstract_answerable / total_prompts,
        pct_articles_with_label_diversity=100.0 * diverse / total_articles,
    )


@dataclass(frozen=True)
class VerificationAccuracy:
    """Stage accuracies against the verifier's adjudication."""

    gen_answer_acc: float
    gen_rationale_acc: float
    ann_answer_acc: float
    ann_rationale_acc: float

    def to_dict(self) -> dict:
        return {
            "gen_answer_acc": self.gen_answer_acc,
            "gen_rationale_acc": self.gen_rationale_acc,
            "ann_answer_acc": self.ann_answer_acc,
            "ann_rationale_acc": self.ann_rationale_acc,
        }


def _spans_overlap(a, b) -> bool:
    return any(
        s1.char_start < s2.char_end and s2.char_start < s1.char_end for s1 in a for s2 in b
    )


def verification_accuracy(corpus: Corpus) -> VerificationAccuracy:
    """Fractions of generation/annotation answers and rationales the verifier confirmed.

    Computed over every prompt carrying a verification record; answer pairs
    need both labels, rationale pairs need spans on both sides.
    """
    answer_hits = {Stage.GENERATION: [0, 0], Stage.ANNOTATION: [0, 0]}
    rationale_hits = {Stage.GENERATION: [0, 0], Stage.ANNOTATION: [0, 0]}
    any_verification = False
    for pid in corpus.prompts:
        verifications = corpus.annotations_for(pid, Stage.VERIFICATION)
        if not verifications:
            continue
        any_verification = True
        verifier = verifications[0]
        for stage in (Stage.GENERATION, Stage.ANNOTATION):
            anns = corpus.annotations_for(pid, stage)
            if not anns:
                continue
            ann = anns[0]
            answer_hits[stage][1] += 1
            answer_hits[stage][0] += ann.label == verifier.label
            if ann.spans and verifier.spans:
                rationale_hits[stage][1] += 1
                rationale_hits[stage][0] += _spans_overlap(ann.spans, verifier.spans)
    if not any_verification:
        raise EvinferError("NO_VERIFICATION_DATA", "corpus has no verification-stage annotations")

    def ratio(pair: list[int]) -> float:
        return pair[0] / pair[1] if pair[1] else 0.0

    return VerificationAccuracy(
        gen_answer_acc=ratio(answer_hits[Stage.GENERATION]),
        gen_rationale_acc=ratio(rationale_hits[Stage.GENERATION]),
        ann_answer_acc=ratio(answer_hits[Stage.ANNOTATION]),
        ann_rationale_acc=ratio(rationale_hits[Stage.ANNOTATION]),
    )
