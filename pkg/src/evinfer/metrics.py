"""Evaluation quantities: macro P/R/F, AUROC, top-1 identification accuracy.

Conventions, fixed here and relied on by every caller:

* Macro averages are unweighted means over the three substantive classes
  (-1, 0, +1), always all three. A class with an empty denominator
  (no predictions, or no gold instances) contributes 0 to the mean. This
  zero convention visibly depresses scores on tiny fixtures; it is the
  deliberate default.
* AUROC is the probability that a random positive outscores a random
  negative, ties counted 0.5, computed pooled over all scored
  (prompt, sentence) pairs rather than averaged per prompt.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import ANSWER_LABELS, Label
from .errors import EvinferError
from .segmentation import SentenceLabeling


@dataclass(frozen=True)
class EvalReport:
    """All evaluation quantities for one run.

    ``confusion`` rows are gold classes, columns predicted, both in
    (-1, 0, +1) order. ``auroc``, ``top1_acc`` and ``per_class_id_acc`` are
    None for diagnostic modes that never run the identifier.
    """

    macro_p: float
    macro_r: float
    macro_f: float
    confusion: tuple[tuple[int, int, int], ...]
    auroc: float | None
    top1_acc: float | None
    per_class_id_acc: tuple[float, ...] | None
    n_prompts: int

    def to_dict(self) -> dict:
        return {
            "macro_p": self.macro_p,
            "macro_r": self.macro_r,
            "macro_f": self.macro_f,
            "confusion": [list(row) for row in self.confusion],
            "auroc": self.auroc,
            "top1_acc": self.top1_acc,
            "per_class_id_acc": list(self.per_class_id_acc)
            if self.per_class_id_acc is not None
            else None,
            "n_prompts": self.n_prompts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        return cls(
            macro_p=data["macro_p"],
            macro_r=data["macro_r"],
            macro_f=data["macro_f"],
            confusion=tuple(tuple(row) for row in data["confusion"]),
            auroc=data["auroc"],
            top1_acc=data["top1_acc"],
            per_class_id_acc=tuple(data["per_class_id_acc"])
            if data["per_class_id_acc"] is not None
            else None,
            n_prompts=data["n_prompts"],
        )


def save_report(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(report.to_json(), encoding="utf-8")
    return path


def load_report(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _check_labels(labels: Sequence[int], name: str) -> None:
    for value in labels:
        if int(value) not in (-1, 0, 1):
            raise EvinferError("MALFORMED_RECORD", f"{name} contains non-answer label {value!r}")


def confusion_matrix(gold: Sequence[int], pred: Sequence[int]) -> tuple[tuple[int, int, int], ...]:
    """3x3 count matrix, rows gold and columns predicted in (-1, 0, +1) order."""
    if len(gold) != len(pred):
        raise EvinferError("LENGTH_MISMATCH", f"gold has {len(gold)} labels, pred has {len(pred)}")
    if not gold:
        raise EvinferError("EMPTY_INPUT", "no labels to score")
    _check_labels(gold, "gold")
    _check_labels(pred, "pred")
    index = {int(lbl): i for i, lbl in enumerate(ANSWER_LABELS)}
    counts = [[0, 0, 0] for _ in range(3)]
    for g, p in zip(gold, pred):
        counts[index[int(g)]][index[int(p)]] += 1
    return tuple(tuple(row) for row in counts)


def macro_prf(gold: Sequence[int], pred: Sequence[int]) -> tuple[float, float, float]:
    """Macro-averaged precision, recall, F over the three classes.

    Per class, F is the harmonic mean of that class's P and R; empty
    denominators contribute 0 (see module docstring).
    """
    confusion = confusion_matrix(gold, pred)
    precisions, recalls, fscores = [], [], []
    for c in range(3):
        tp = confusion[c][c]
        predicted = sum(confusion[r][c] for r in range(3))
        actual = sum(confusion[c])
        p = tp / predicted if predicted else 0.0
        r = tp / actual if actual else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        precisions.append(p)
        recalls.append(r)
        fscores.append(f)
    return (sum(precisions) / 3, sum(recalls) / 3, sum(fscores) / 3)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; tied values share the mean of their rank range."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def auroc(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> float:
    """P(random positive outscores random negative), ties as 0.5.

    Rank based, exactly equivalent to the pairwise count: average ranks are
    half-integers, so the rank sum is computed without rounding error.
    """
    if len(pos_scores) == 0 or len(neg_scores) == 0:
        raise EvinferError("EMPTY_CLASS", "auroc needs at least one score in each class")
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    ranks = _average_ranks(np.concatenate([pos, neg]))
    rank_sum = float(np.sum(ranks[: len(pos)]))
    u = rank_sum - len(pos) * (len(pos) + 1) / 2
    return u / (len(pos) * len(neg))


def top1_accuracy(
    chosen_indices: Mapping[str, int], labelings: Mapping[str, SentenceLabeling]
) -> float:
    """Fraction of prompts whose chosen sentence is one of the gold evidence sentences."""
    if not chosen_indices:
        raise EvinferError("EMPTY_INPUT", "no predictions to score")
    hits = 0
    for pid, index in chosen_indices.items():
        if pid not in labelings:
            raise EvinferError("MISSING_LABELING", f"no sentence labeling for prompt {pid}")
        hits += index in labelings[pid].evidence_indices
    return hits / len(chosen_indices)


def per_class_breakdown(
    chosen_indices: Mapping[str, int],
    gold_labels: Mapping[str, int],
    pred_labels: Mapping[str, int],
    labelings: Mapping[str, SentenceLabeling],
) -> tuple[tuple[float, ...], tuple[tuple[int, int, int], ...]]:
    """Identification accuracy restricted to each gold class, plus the confusion matrix."""
    pids = sorted(chosen_indices)
    if set(pids) != set(gold_labels) or set(pids) != set(pred_labels):
        raise EvinferError("LENGTH_MISMATCH", "prediction and label keys differ")
    per_class = []
    for lbl in ANSWER_LABELS:
        class_pids = [pid for pid in pids if gold_labels[pid] == int(lbl)]
        if class_pids:
            per_class.append(top1_accuracy({p: chosen_indices[p] for p in class_pids}, labelings))
        else:
            per_class.append(0.0)
    confusion = confusion_matrix(
        [gold_labels[p] for p in pids], [pred_labels[p] for p in pids]
    )
    return tuple(per_class), confusion


def build_report(
    gold_labels: Mapping[str, int],
    pred_labels: Mapping[str, int],
    chosen_indices: Mapping[str, int] | None = None,
    labelings: Mapping[str, SentenceLabeling] | None = None,
    identifier_scores: tuple[Sequence[float], Sequence[float]] | None = None,
) -> EvalReport:
    """Assemble an EvalReport; identifier-side fields only when inputs are given.

    ``identifier_scores`` is the pooled (positive, negative) sentence-score
    split for AUROC.
    """
    pids = sorted(gold_labels)
    if not pids:
        raise EvinferError("EMPTY_EVAL", "no prompts to evaluate")
    gold = [int(gold_labels[p]) for p in pids]
    pred = [int(pred_labels[p]) for p in pids]
    p, r, f = macro_prf(gold, pred)
    if chosen_indices is not None and labelings is not None:
        per_class, confusion = per_class_breakdown(
            chosen_indices, gold_labels, pred_labels, labelings
        )
        top1 = top1_accuracy(chosen_indices, labelings)
    else:
        per_class = None
        confusion = confusion_matrix(gold, pred)
        top1 = None
    roc = None
    if identifier_scores is not None:
        roc = auroc(identifier_scores[0], identifier_scores[1])
    return EvalReport(
        macro_p=p,
        macro_r=r,
        macro_f=f,
        confusion=confusion,
        auroc=roc,
        top1_acc=top1,
        per_class_id_acc=per_class,
        n_prompts=len(pids),
    )
