"""Sentence segmentation and alignment of character spans to sentence indices.

The default splitter is rule based and fully deterministic: sentences end at
runs of ``.!?`` followed by whitespace (guarded by an abbreviation list and
initials), and at newlines. Heavier scientific splitters can be plugged in
through the same two-method interface; anything with an ``identity`` string
and a ``split(text) -> [(start, end), ...]`` method qualifies.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .corpus import Article, Corpus, EvidenceSpan, Stage
from .errors import EvinferError


@dataclass(frozen=True)
class Sentence:
    """One sentence of an article, as a half-open character range."""

    article_id: str
    index: int
    char_start: int
    char_end: int

    def slice(self, text: str) -> str:
        return text[self.char_start : self.char_end]


@dataclass(frozen=True)
class SentenceLabeling:
    """Sentence indices carrying gold evidence for one prompt."""

    prompt_id: str
    evidence_indices: frozenset[int]


class SentenceSplitter(Protocol):
    identity: str

    def split(self, text: str) -> list[tuple[int, int]]: ...


# Tokens (lowercased, dot-stripped) after which a period does not end a sentence.
_ABBREVIATIONS = {
    "al", "approx", "ca", "cf", "dr", "e.g", "et", "etc", "fig", "figs",
    "i.e", "mr", "mrs", "ms", "no", "prof", "resp", "st", "vs",
}

_TERMINATOR = re.compile(r"[.!?]+")


class RuleSplitter:
    """Deterministic punctuation/newline sentence splitter with an abbreviation guard."""

    identity = "rule-splitter-v1"

    def split(self, text: str) -> list[tuple[int, int]]:
        boundaries = self._boundaries(text)
        offsets: list[tuple[int, int]] = []
        start = 0
        for end in boundaries:
            seg_start, seg_end = _trim(text, start, end)
            if seg_start < seg_end:
                offsets.append((seg_start, seg_end))
            start = end
        return offsets

    def _boundaries(self, text: str) -> list[int]:
        ends = []
        for pos, ch in enumerate(text):
            if ch == "\n":
                ends.append(pos)
        for match in _TERMINATOR.finditer(text):
            end = match.end()
            if end < len(text) and not text[end].isspace():
                continue  # mid-token punctuation, e.g. decimal points
            if "." in match.group() and self._is_guarded(text, match.start()):
                continue
            ends.append(end)
        ends.append(len(text))
        return sorted(set(ends))

    @staticmethod
    def _is_guarded(text: str, dot_pos: int) -> bool:
        # Word immediately before the terminator, including internal dots
        # so "e.g." and "i.e." resolve as single tokens.
        i = dot_pos
        while i > 0 and (text[i - 1].isalnum() or text[i - 1] == "."):
            i -= 1
        token = text[i:dot_pos].rstrip(".")
        if not token:
            return False
        if token.lower() in _ABBREVIATIONS:
            return True
        # Single uppercase letter: almost always an initial.
        return len(token) == 1 and token.isupper()


def _trim(text: str, start: int, end: int) -> tuple[int, int]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


def segment(article: Article, segmenter: SentenceSplitter | None = None) -> list[Sentence]:
    """Split an article into sentences with validated, ordered offsets."""
    if not article.text.strip():
        raise EvinferError("EMPTY_TEXT", f"article {article.article_id} has no text to segment")
    segmenter = segmenter or RuleSplitter()
    offsets = segmenter.split(article.text)
    sentences = [
        Sentence(article_id=article.article_id, index=i, char_start=s, char_end=e)
        for i, (s, e) in enumerate(offsets)
    ]
    previous_end = 0
    for sent in sentences:
        if not previous_end <= sent.char_start < sent.char_end <= len(article.text):
            raise EvinferError(
                "MALFORMED_RECORD",
                f"segmenter {segmenter.identity} produced bad offsets for {article.article_id}",
            )
        previous_end = sent.char_end
    return sentences


def align_evidence(
    sentences: Sequence[Sentence], spans: Iterable[EvidenceSpan]
) -> frozenset[int]:
    """Sentence indices whose range overlaps any span by at least one character."""
    spans = list(spans)
    indices: set[int] = set()
    for span in spans:
        hit = False
        for sent in sentences:
            if span.char_start < sent.char_end and sent.char_start < span.char_end:
                indices.add(sent.index)
                hit = True
        if not hit:
            raise EvinferError(
                "SPAN_OUTSIDE_SENTENCED_TEXT",
                f"span [{span.char_start}, {span.char_end}) overlaps no sentence",
            )
    return frozenset(indices)


def restrict_to_abstract(sentences: Sequence[Sentence], article: Article) -> list[Sentence]:
    """Sentences wholly inside the abstract, renumbered from 0 in order.

    A sentence straddling ``abstract_end`` is excluded so that abstract-only
    processing can never leak body text.
    """
    kept = [s for s in sentences if s.char_end <= article.abstract_end]
    return [
        Sentence(article_id=s.article_id, index=i, char_start=s.char_start, char_end=s.char_end)
        for i, s in enumerate(kept)
    ]


def build_sentence_index(
    corpus: Corpus, segmenter: SentenceSplitter | None = None
) -> dict[str, list[Sentence]]:
    """Segment every article once; keyed by article_id."""
    segmenter = segmenter or RuleSplitter()
    return {aid: segment(article, segmenter) for aid, article in corpus.articles.items()}


def build_labelings(
    corpus: Corpus, sentence_index: dict[str, list[Sentence]]
) -> dict[str, SentenceLabeling]:
    """Gold evidence sentence indices per prompt, from each prompt's gold annotation.

    Prompts whose gold annotation is INVALID get an empty labeling.
    """
    labelings: dict[str, SentenceLabeling] = {}
    for pid, prompt in corpus.prompts.items():
        gold = corpus.gold_annotation(pid)
        if not gold.label.is_answer():
            labelings[pid] = SentenceLabeling(prompt_id=pid, evidence_indices=frozenset())
            continue
        sentences = sentence_index[prompt.article_id]
        labelings[pid] = SentenceLabeling(
            prompt_id=pid, evidence_indices=align_evidence(sentences, gold.spans)
        )
    return labelings


# --- optional sidecar cache ---

def save_sentence_index(
    index: dict[str, list[Sentence]], segmenter_identity: str, path: str | Path
) -> Path:
    """Persist a sentence index to a JSONL sidecar keyed by segmenter identity."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for aid in sorted(index):
            record = {
                "article_id": aid,
                "segmenter": segmenter_identity,
                "sentences": [[s.char_start, s.char_end] for s in index[aid]],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def load_sentence_index(path: str | Path, segmenter_identity: str) -> dict[str, list[Sentence]]:
    """Load a sidecar written by :func:`save_sentence_index`.

    Entries cached under a different segmenter identity are rejected rather
    than silently reused.
    """
    path = Path(path)
    if not path.is_file():
        raise EvinferError("MISSING_FILE", f"sentence cache not found: {path}")
    index: dict[str, list[Sentence]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            if record.get("segmenter") != segmenter_identity:
                raise EvinferError(
                    "MALFORMED_RECORD",
                    f"{path.name}:{lineno}: cached under segmenter "
                    f"{record.get('segmenter')!r}, wanted {segmenter_identity!r}",
                )
            aid = record["article_id"]
            index[aid] = [
                Sentence(article_id=aid, index=i, char_start=s, char_end=e)
                for i, (s, e) in enumerate(record["sentences"])
            ]
    return index
