"""Krippendorff's alpha for nominal labels, plus assembly from corpus stages.

alpha = 1 - Do/De with Do and De taken from the standard coincidence-matrix
construction. Units rated once cannot be paired and drop out entirely: their
values enter neither the observed nor the expected disagreement. INVALID is
kept as a fourth nominal category, since a rater discarding a prompt that
another rater answered is genuine disagreement.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Mapping

from .corpus import Corpus, Stage
from .errors import EvinferError


@dataclass(frozen=True)
class ReliabilityData:
    """Ratings for agreement computation: (unit, rater) -> nominal label."""

    ratings: Mapping[tuple[str, str], Hashable]

    def by_unit(self) -> dict[str, list[Hashable]]:
        units: dict[str, list[Hashable]] = {}
        for (unit, rater), value in sorted(self.ratings.items()):
            units.setdefault(unit, []).append(value)
        return units


def krippendorff_alpha(data: ReliabilityData) -> float:
    """Nominal-metric alpha over all units with two or more ratings."""
    units = {u: vals for u, vals in data.by_unit().items() if len(vals) >= 2}
    if not units:
        raise EvinferError(
            "INSUFFICIENT_PAIRABLE_VALUES", "no unit carries two or more ratings"
        )
    n = sum(len(vals) for vals in units.values())
    if n < 2:
        raise EvinferError("INSUFFICIENT_PAIRABLE_VALUES", "fewer than two pairable values")

    # Observed disagreement from within-unit coincidences.
    observed = 0.0
    totals: Counter = Counter()
    for vals in units.values():
        m = len(vals)
        counts = Counter(vals)
        totals.update(counts)
        disagreeing_pairs = m * m - sum(c * c for c in counts.values())
        observed += disagreeing_pairs / (m - 1)
    observed /= n

    # Expected disagreement from the pooled value frequencies.
    expected = (n * n - sum(c * c for c in totals.values())) / (n * (n - 1))
    if expected == 0.0:
        # Single category throughout: no variation to disagree over.
        return 1.0
    return 1.0 - observed / expected


def assemble_stage_ratings(corpus: Corpus, raters: str = "gen-ann") -> ReliabilityData:
    """Build ReliabilityData from annotation stages, one rater per stage.

    ``raters="gen-ann"`` pairs prompt generation against prompt annotation;
    ``raters="all"`` adds verification as a third rater. Each prompt is one
    unit; the first annotation per stage (in canonical order) supplies its
    label.
    """
    if raters == "gen-ann":
        stages = (Stage.GENERATION, Stage.ANNOTATION)
    elif raters == "all":
        stages = (Stage.GENERATION, Stage.ANNOTATION, Stage.VERIFICATION)
    else:
        raise EvinferError("MALFORMED_RECORD", f"unknown rater assembly {raters!r}")
    ratings: dict[tuple[str, str], Hashable] = {}
    for pid in sorted(corpus.prompts):
        for stage in stages:
            anns = corpus.annotations_for(pid, stage)
            if anns:
                ratings[(pid, stage.value)] = int(anns[0].label)
    return ReliabilityData(ratings=ratings)
