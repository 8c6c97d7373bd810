"""Agreement and decision-quality metrics over grade series.

All internal arithmetic is exact rational; floats only appear in the
returned values.  That keeps boundary cases (identical raters, affine
rescalings) bit-stable instead of tolerance-dependent.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

from .engine import (
    DECISION_CAN_DECIDE,
    DECISION_CANNOT_DECIDE,
    Decision,
)
from .errors import EmptySeriesError, UndefinedAlphaError, ValidationError
from .model import to_points

SCALE_NOMINAL = "nominal"
SCALE_INTERVAL = "interval"
SCALES = (SCALE_NOMINAL, SCALE_INTERVAL)


@dataclass(frozen=True)
class GradePairSeries:
    """Paired (predicted, truth) grades plus the scale distances live on."""

    pairs: tuple[tuple[Fraction, Fraction], ...]
    scale: str = SCALE_INTERVAL

    def __post_init__(self) -> None:
        if self.scale not in SCALES:
            raise ValidationError(f"scale: must be one of {SCALES}, got {self.scale!r}")

    @classmethod
    def from_values(
        cls, pairs: Iterable[tuple[Any, Any]], scale: str = SCALE_INTERVAL
    ) -> "GradePairSeries":
        converted = tuple(
            (to_points(a, field_name="predicted"), to_points(b, field_name="truth"))
            for a, b in pairs
        )
        return cls(pairs=converted, scale=scale)


def accuracy(series: GradePairSeries) -> float:
    """Fraction of pairs that agree exactly (rational equality)."""
    if not series.pairs:
        raise EmptySeriesError("accuracy over an empty series")
    hits = sum(1 for predicted, truth in series.pairs if predicted == truth)
    return float(Fraction(hits, len(series.pairs)))


def _delta(scale: str, a: Fraction, b: Fraction) -> Fraction:
    if scale == SCALE_NOMINAL:
        return Fraction(0) if a == b else Fraction(1)
    return (a - b) ** 2


def _alpha_from_units(units: Sequence[Sequence[Fraction]], scale: str) -> float:
    """Agreement coefficient from a coincidence matrix over rating units.

    Each unit holds the m values observed for one item; every ordered
    pair inside a unit adds 1/(m-1) to the coincidence count of its two
    values.  Observed disagreement is the delta-weighted share of those
    coincidences; expected disagreement is the same weighting applied to
    the pooled value margins.
    """
    counted = [unit for unit in units if len(unit) >= 2]
    if not counted:
        raise EmptySeriesError("agreement over a series with no pairable units")
    coincidence: dict[tuple[Fraction, Fraction], Fraction] = {}
    margins: dict[Fraction, Fraction] = {}
    total = Fraction(0)
    for unit in counted:
        m = len(unit)
        weight = Fraction(1, m - 1)
        for i, a in enumerate(unit):
            for j, b in enumerate(unit):
                if i == j:
                    continue
                coincidence[(a, b)] = coincidence.get((a, b), Fraction(0)) + weight
            margins[a] = margins.get(a, Fraction(0)) + 1
            total += 1

    observed = Fraction(0)
    for (a, b), count in coincidence.items():
        if a != b:
            observed += count * _delta(scale, a, b)
    observed /= total

    expected = Fraction(0)
    values = sorted(margins)
    for a in values:
        for b in values:
            if a != b:
                expected += margins[a] * margins[b] * _delta(scale, a, b)
    expected /= total * (total - 1)

    if expected == 0:
        raise UndefinedAlphaError(
            "all values identical: expected disagreement is zero"
        )
    return float(1 - observed / expected)


def krippendorff_alpha(series: GradePairSeries) -> float:
    """Chance-corrected agreement between two aligned raters.

    1.0 is perfect agreement, 0.0 is chance level, negative values are
    systematic disagreement.  Undefined when every value in the pooled
    data is identical.
    """
    if not series.pairs:
        raise EmptySeriesError("agreement over an empty series")
    return _alpha_from_units([list(pair) for pair in series.pairs], series.scale)


def robustness_alpha(
    grade_matrix: Sequence[Sequence[Any]], scale: str = SCALE_INTERVAL
) -> float:
    """Agreement across reworded-rule grading passes.

    grade_matrix[v][i] is the grade variant v gave item i; every variant
    must cover the same items.  1.0 means rewording never changed a
    grade.
    """
    if scale not in SCALES:
        raise ValidationError(f"scale: must be one of {SCALES}, got {scale!r}")
    if len(grade_matrix) < 2:
        raise ValidationError("grade_matrix: need at least two variants")
    lengths = {len(row) for row in grade_matrix}
    if len(lengths) != 1:
        raise ValidationError("grade_matrix: variants must cover the same items")
    n_items = lengths.pop()
    if n_items == 0:
        raise EmptySeriesError("agreement over zero items")
    units = []
    for i in range(n_items):
        units.append(
            [to_points(row[i], field_name=f"grade_matrix[.][{i}]") for row in grade_matrix]
        )
    return _alpha_from_units(units, scale)


@dataclass(frozen=True)
class ContingencyTable:
    """Decision quality against truth: the four confident/correct cells.

    true_positive: committed and the grade is correct.
    false_positive: committed but the grade is wrong (the risky cell).
    false_negative: deferred to review although the snapped grade was correct.
    true_negative: deferred and the snapped grade was indeed wrong.
    """

    true_positive: int
    false_positive: int
    false_negative: int
    true_negative: int

    @property
    def total(self) -> int:
        return (
            self.true_positive + self.false_positive + self.false_negative + self.true_negative
        )


@dataclass(frozen=True)
class ContingencyMetrics:
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None
    fp_rate: float


def build_contingency(
    items: Iterable[tuple[Decision, Fraction | None, Fraction]],
) -> ContingencyTable:
    """Tabulate (decision, snapped grade, truth) triples.

    The snapped grade is what the item would have received had the
    pipeline committed; it classifies deferred items as needless
    (false negative) or justified (true negative).  Unanswered items
    must be filtered out by the caller.
    """
    tp = fp = fn = tn = 0
    for decision, snapped, truth in items:
        if decision.kind == DECISION_CAN_DECIDE:
            if decision.value == truth:
                tp += 1
            else:
                fp += 1
        elif decision.kind == DECISION_CANNOT_DECIDE:
            if snapped is not None and snapped == truth:
                fn += 1
            else:
                tn += 1
        else:
            raise ValidationError(
                f"contingency items must be decided or deferred, got {decision.kind}"
            )
    return ContingencyTable(
        true_positive=tp, false_positive=fp, false_negative=fn, true_negative=tn
    )


def contingency_metrics(table: ContingencyTable) -> ContingencyMetrics:
    """Summary rates for a decision table.

    Ratios with a zero denominator are returned as None rather than
    invented; accuracy and the false-positive share always exist for a
    non-empty table.
    """
    total = table.total
    if total == 0:
        raise EmptySeriesError("metrics over an empty contingency table")
    tp, fp = table.true_positive, table.false_positive
    fn, tn = table.false_negative, table.true_negative
    acc = float(Fraction(tp + tn, total))
    precision = None if tp + fp == 0 else Fraction(tp, tp + fp)
    recall = None if tp + fn == 0 else Fraction(tp, tp + fn)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = float(2 * precision * recall / (precision + recall))
    return ContingencyMetrics(
        accuracy=acc,
        precision=None if precision is None else float(precision),
        recall=None if recall is None else float(recall),
        f1=f1,
        fp_rate=float(Fraction(fp, total)),
    )
