"""Derive the abstract-only corpus.

A prompt survives iff at least one of its annotations is fully contained in
the abstract, where containment is sentence based and strict: every sentence
a span overlaps must itself lie wholly inside the abstract. Surviving
prompts keep only their abstract-contained spans; annotations reduced to
zero spans are dropped, as are articles left without prompts. Article text
is truncated at the abstract boundary, so the operation is idempotent.
"""

from __future__ import annotations

from dataclasses import replace

from .corpus import Annotation, Article, Corpus, validate_corpus
from .errors import EvinferError
from .segmentation import Sentence, SentenceSplitter, build_sentence_index


def _span_contained_in_abstract(span, sentences: list[Sentence], abstract_end: int) -> bool:
    touched = [
        s for s in sentences if span.char_start < s.char_end and s.char_start < span.char_end
    ]
    if not touched:
        return False
    return all(s.char_end <= abstract_end for s in touched)


def derive_abstract_subset(
    corpus: Corpus, segmenter: SentenceSplitter | None = None
) -> Corpus:
    """The abstract-only corpus; splits preserved, result fully validated."""
    sentence_index = build_sentence_index(corpus, segmenter)
    subset = Corpus()

    for pid in sorted(corpus.prompts):
        prompt = corpus.prompts[pid]
        article = corpus.articles[prompt.article_id]
        if not isinstance(article.abstract_end, int):
            raise EvinferError(
                "MISSING_ABSTRACT_BOUNDARY", f"article {article.article_id} lacks abstract_end"
            )
        sentences = sentence_index[prompt.article_id]
        kept_annotations: list[Annotation] = []
        fully_contained = False
        for ann in corpus.annotations[pid]:
            if not ann.label.is_answer():
                continue  # INVALID annotations carry no spans to retain
            kept_spans = tuple(
                span
                for span in ann.spans
                if _span_contained_in_abstract(span, sentences, article.abstract_end)
            )
            if len(kept_spans) == len(ann.spans):
                fully_contained = True
            if kept_spans:
                kept_annotations.append(replace(ann, spans=kept_spans))
        if not fully_contained or not kept_annotations:
            continue
        subset.prompts[pid] = prompt
        subset.annotations[pid] = kept_annotations
        if prompt.article_id not in subset.articles:
            truncated = Article(
                article_id=article.article_id,
                title=article.title,
                text=article.text[: article.abstract_end],
                abstract_end=article.abstract_end,
            )
            subset.articles[article.article_id] = truncated
            subset.split[article.article_id] = corpus.split[article.article_id]

    if not subset.prompts:
        raise EvinferError("EMPTY_CORPUS", "no prompt has abstract-contained evidence")
    return validate_corpus(subset)
