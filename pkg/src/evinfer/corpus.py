"""Data model and canonical JSONL serialization for annotated trial-report corpora.

A corpus bundles four record kinds: articles (plain text with a known
abstract boundary), ICO prompts posed against articles, annotations
(significance label plus evidence spans, tagged with the collection stage
that produced them), and an article-level train/dev/test split.

Canonical on-disk layout is one UTF-8 JSONL file per record kind inside a
directory::

    articles.jsonl     {"article_id", "title", "text", "abstract_end"}
    prompts.jsonl      {"prompt_id", "article_id", "intervention", "comparator", "outcome"}
    annotations.jsonl  {"prompt_id", "label", "spans": [[start, end], ...], "stage"}
    split.jsonl        {"article_id", "split"}

Labels use the -1/0/+1 integer convention for significantly decreased, no
significant difference, and significantly increased; invalid prompts are
stored as 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import EvinferError


class Label(IntEnum):
    """Reported effect of the intervention vs the comparator on the outcome."""

    SIG_DEC = -1
    NO_DIFF = 0
    SIG_INC = 1
    INVALID = 2

    def is_answer(self) -> bool:
        """True for the three substantive classes, False for INVALID."""
        return self is not Label.INVALID


#: The three substantive classes, in confusion-matrix row/column order.
ANSWER_LABELS = (Label.SIG_DEC, Label.NO_DIFF, Label.SIG_INC)


class Stage(str, Enum):
    """Collection stage that produced an annotation."""

    GENERATION = "generation"
    ANNOTATION = "annotation"
    VERIFICATION = "verification"


_STAGE_ORDER = {Stage.GENERATION: 0, Stage.ANNOTATION: 1, Stage.VERIFICATION: 2}


class Split(str, Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


@dataclass(frozen=True)
class Article:
    """Full plain text of one trial report, character-indexed.

    The abstract is ``text[0:abstract_end]``.
    """

    article_id: str
    title: str
    text: str
    abstract_end: int


@dataclass(frozen=True)
class ICOPrompt:
    """An intervention/comparator/outcome triple posed against one article."""

    prompt_id: str
    article_id: str
    intervention: str
    comparator: str
    outcome: str


@dataclass(frozen=True, order=True)
class EvidenceSpan:
    """Half-open character range [char_start, char_end) in article text."""

    char_start: int
    char_end: int


@dataclass(frozen=True)
class Annotation:
    """One answer for a prompt: a label, its supporting spans, and the stage."""

    prompt_id: str
    label: Label
    spans: tuple[EvidenceSpan, ...]
    stage: Stage


@dataclass
class Corpus:
    """Validated, immutable-by-convention container for one dataset.

    Do not mutate a corpus after :func:`validate_corpus` has accepted it;
    all downstream code assumes unrestricted concurrent reads are safe.
    """

    articles: dict[str, Article] = field(default_factory=dict)
    prompts: dict[str, ICOPrompt] = field(default_factory=dict)
    annotations: dict[str, list[Annotation]] = field(default_factory=dict)
    split: dict[str, Split] = field(default_factory=dict)

    def article_of(self, prompt_id: str) -> Article:
        return self.articles[self.prompts[prompt_id].article_id]

    def prompts_of_article(self, article_id: str) -> list[ICOPrompt]:
        return [p for p in self.prompts.values() if p.article_id == article_id]

    def prompt_ids_in_split(self, split: Split) -> list[str]:
        """Prompt ids whose article belongs to ``split``, sorted for determinism."""
        return sorted(
            pid for pid, p in self.prompts.items() if self.split[p.article_id] is split
        )

    def article_ids_in_split(self, split: Split) -> list[str]:
        return sorted(aid for aid, s in self.split.items() if s is split)

    def annotations_for(self, prompt_id: str, stage: Stage | None = None) -> list[Annotation]:
        anns = self.annotations.get(prompt_id, [])
        if stage is None:
            return list(anns)
        return [a for a in anns if a.stage is stage]

    def gold_annotation(self, prompt_id: str) -> Annotation:
        """The annotation supplying the gold label and evidence for a prompt.

        The prompt-annotation stage wins over prompt generation when both are
        present; a verification record is used only if it is all there is.
        """
        anns = sorted(
            self.annotations[prompt_id],
            key=lambda a: (_STAGE_ORDER[a.stage], a.spans, int(a.label)),
        )
        for stage in (Stage.ANNOTATION, Stage.GENERATION, Stage.VERIFICATION):
            for a in anns:
                if a.stage is stage:
                    return a
        raise EvinferError("MALFORMED_RECORD", f"prompt {prompt_id} has no annotations")

    def gold_label(self, prompt_id: str) -> Label:
        return self.gold_annotation(prompt_id).label

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.articles == other.articles
            and self.prompts == other.prompts
            and self.annotations == other.annotations
            and self.split == other.split
        )


def validate_corpus(corpus: Corpus) -> Corpus:
    """Check every corpus invariant; raise :class:`EvinferError` on the first hit.

    Codes raised: MALFORMED_RECORD (field-level violations, missing splits or
    annotations), DANGLING_REFERENCE (prompt to article, annotation to
    prompt), SPAN_OUT_OF_BOUNDS.
    """
    for aid, art in corpus.articles.items():
        if aid != art.article_id:
            raise EvinferError("MALFORMED_RECORD", f"article key {aid!r} != id {art.article_id!r}")
        if not art.text:
            raise EvinferError("MALFORMED_RECORD", f"article {aid}: empty text")
        if not 0 < art.abstract_end <= len(art.text):
            raise EvinferError(
                "MALFORMED_RECORD",
                f"article {aid}: abstract_end {art.abstract_end} outside (0, {len(art.text)}]",
            )
    for pid, prompt in corpus.prompts.items():
        if pid != prompt.prompt_id:
            raise EvinferError("MALFORMED_RECORD", f"prompt key {pid!r} != id {prompt.prompt_id!r}")
        if prompt.article_id not in corpus.articles:
            raise EvinferError(
                "DANGLING_REFERENCE", f"prompt {pid} references unknown article {prompt.article_id}"
            )
        for name in ("intervention", "comparator", "outcome"):
            if not getattr(prompt, name).strip():
                raise EvinferError("MALFORMED_RECORD", f"prompt {pid}: empty {name}")
        if pid not in corpus.annotations or not corpus.annotations[pid]:
            raise EvinferError("MALFORMED_RECORD", f"prompt {pid} has no annotations")
    for pid, anns in corpus.annotations.items():
        if pid not in corpus.prompts:
            raise EvinferError("DANGLING_REFERENCE", f"annotation references unknown prompt {pid}")
        text = corpus.article_of(pid).text
        for ann in anns:
            if ann.prompt_id != pid:
                raise EvinferError("MALFORMED_RECORD", f"annotation under {pid} carries id {ann.prompt_id}")
            if ann.label.is_answer() and not ann.spans:
                raise EvinferError("MALFORMED_RECORD", f"prompt {pid}: answer annotation without spans")
            if not ann.label.is_answer() and ann.spans:
                raise EvinferError("MALFORMED_RECORD", f"prompt {pid}: INVALID annotation with spans")
            for span in ann.spans:
                if not 0 <= span.char_start < span.char_end <= len(text):
                    raise EvinferError(
                        "SPAN_OUT_OF_BOUNDS",
                        f"prompt {pid}: span [{span.char_start}, {span.char_end}) "
                        f"outside text of length {len(text)}",
                    )
                if not text[span.char_start : span.char_end].strip():
                    raise EvinferError(
                        "SPAN_OUT_OF_BOUNDS",
                        f"prompt {pid}: span [{span.char_start}, {span.char_end}) is whitespace",
                    )
    for aid in corpus.articles:
        if aid not in corpus.split:
            raise EvinferError("MALFORMED_RECORD", f"article {aid} missing split assignment")
    for aid in corpus.split:
        if aid not in corpus.articles:
            raise EvinferError("DANGLING_REFERENCE", f"split references unknown article {aid}")
    return corpus


# --- canonical JSONL I/O ---

_FILES = ("articles.jsonl", "prompts.jsonl", "annotations.jsonl", "split.jsonl")


def _read_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvinferError("MALFORMED_RECORD", f"{path.name}:{lineno}: {exc}") from exc
            if not isinstance(record, dict):
                raise EvinferError("MALFORMED_RECORD", f"{path.name}:{lineno}: not an object")
            yield lineno, record


def _take(record: dict, key: str, where: str):
    if key not in record:
        raise EvinferError("MALFORMED_RECORD", f"{where}: missing field {key!r}")
    return record[key]


def load_canonical(path: str | Path) -> Corpus:
    """Load and fully validate a corpus from its canonical JSONL directory."""
    root = Path(path)
    if not root.is_dir():
        raise EvinferError("MISSING_FILE", f"corpus directory not found: {root}")
    for name in _FILES:
        if not (root / name).is_file():
            raise EvinferError("MISSING_FILE", f"missing corpus file: {root / name}")

    corpus = Corpus()
    for lineno, rec in _read_jsonl(root / "articles.jsonl"):
        where = f"articles.jsonl:{lineno}"
        art = Article(
            article_id=str(_take(rec, "article_id", where)),
            title=str(_take(rec, "title", where)),
            text=str(_take(rec, "text", where)),
            abstract_end=int(_take(rec, "abstract_end", where)),
        )
        if art.article_id in corpus.articles:
            raise EvinferError("MALFORMED_RECORD", f"{where}: duplicate article {art.article_id}")
        corpus.articles[art.article_id] = art
    for lineno, rec in _read_jsonl(root / "prompts.jsonl"):
        where = f"prompts.jsonl:{lineno}"
        prompt = ICOPrompt(
            prompt_id=str(_take(rec, "prompt_id", where)),
            article_id=str(_take(rec, "article_id", where)),
            intervention=str(_take(rec, "intervention", where)),
            comparator=str(_take(rec, "comparator", where)),
            outcome=str(_take(rec, "outcome", where)),
        )
        if prompt.prompt_id in corpus.prompts:
            raise EvinferError("MALFORMED_RECORD", f"{where}: duplicate prompt {prompt.prompt_id}")
        corpus.prompts[prompt.prompt_id] = prompt
    for lineno, rec in _read_jsonl(root / "annotations.jsonl"):
        where = f"annotations.jsonl:{lineno}"
        try:
            label = Label(int(_take(rec, "label", where)))
            stage = Stage(str(_take(rec, "stage", where)))
        except ValueError as exc:
            raise EvinferError("MALFORMED_RECORD", f"{where}: {exc}") from exc
        raw_spans = _take(rec, "spans", where)
        try:
            spans = tuple(EvidenceSpan(int(s), int(e)) for s, e in raw_spans)
        except (TypeError, ValueError) as exc:
            raise EvinferError("MALFORMED_RECORD", f"{where}: bad spans {raw_spans!r}") from exc
        ann = Annotation(
            prompt_id=str(_take(rec, "prompt_id", where)), label=label, spans=spans, stage=stage
        )
        corpus.annotations.setdefault(ann.prompt_id, []).append(ann)
    for lineno, rec in _read_jsonl(root / "split.jsonl"):
        where = f"split.jsonl:{lineno}"
        aid = str(_take(rec, "article_id", where))
        try:
            split = Split(str(_take(rec, "split", where)))
        except ValueError as exc:
            raise EvinferError("MALFORMED_RECORD", f"{where}: {exc}") from exc
        if aid in corpus.split:
            raise EvinferError("MALFORMED_RECORD", f"{where}: duplicate split for article {aid}")
        corpus.split[aid] = split

    for pid in corpus.annotations:
        corpus.annotations[pid] = _sorted_annotations(corpus.annotations[pid])
    return validate_corpus(corpus)


def _sorted_annotations(anns: Iterable[Annotation]) -> list[Annotation]:
    return sorted(anns, key=lambda a: (_STAGE_ORDER[a.stage], a.spans, int(a.label)))


def save_canonical(corpus: Corpus, path: str | Path) -> Path:
    """Write a corpus in canonical form; output bytes are deterministic."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    def dump(name: str, records: Iterable[dict]) -> None:
        with open(root / name, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")

    dump(
        "articles.jsonl",
        (
            {
                "article_id": a.article_id,
                "title": a.title,
                "text": a.text,
                "abstract_end": a.abstract_end,
            }
            for a in (corpus.articles[k] for k in sorted(corpus.articles))
        ),
    )
    dump(
        "prompts.jsonl",
        (
            {
                "prompt_id": p.prompt_id,
                "article_id": p.article_id,
                "intervention": p.intervention,
                "comparator": p.comparator,
                "outcome": p.outcome,
            }
            for p in (corpus.prompts[k] for k in sorted(corpus.prompts))
        ),
    )
    dump(
        "annotations.jsonl",
        (
            {
                "prompt_id": a.prompt_id,
                "label": int(a.label),
                "spans": [[s.char_start, s.char_end] for s in a.spans],
                "stage": a.stage.value,
            }
            for pid in sorted(corpus.annotations)
            for a in _sorted_annotations(corpus.annotations[pid])
        ),
    )
    dump(
        "split.jsonl",
        (
            {"article_id": aid, "split": corpus.split[aid].value}
            for aid in sorted(corpus.split)
        ),
    )
    return root


class CorpusFormat(str, Enum):
    CANONICAL_JSONL = "canonical"
    UPSTREAM_RELEASE = "upstream"


def load_corpus(path: str | Path, format: CorpusFormat = CorpusFormat.CANONICAL_JSONL) -> Corpus:
    """Load a corpus in either supported on-disk format."""
    if format is CorpusFormat.CANONICAL_JSONL:
        return load_canonical(path)
    if format is CorpusFormat.UPSTREAM_RELEASE:
        from .ingest import import_upstream_release

        return import_upstream_release(path)
    raise EvinferError("MALFORMED_RECORD", f"unrecognized corpus format {format!r}")
