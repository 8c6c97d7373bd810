from __future__ import annotations

import random
import time
from fractions import Fraction

import pytest

from rubricon.engine import CANNOT_DECIDE, UNANSWERED, can_decide
from rubricon.errors import EmptySeriesError, UndefinedAlphaError, ValidationError
from rubricon.metrics import (
    ContingencyTable,
    GradePairSeries,
    SCALE_INTERVAL,
    SCALE_NOMINAL,
    accuracy,
    build_contingency,
    contingency_metrics,
    krippendorff_alpha,
    robustness_alpha,
)

from oracles import agreement_alpha_bruteforce


def _series(pairs, scale=SCALE_INTERVAL) -> GradePairSeries:
    return GradePairSeries.from_values(pairs, scale=scale)


def test_accuracy_counts_exact_rational_matches():
    series = _series([(1, 1), (0.5, "1/2"), (2, 1)])
    assert accuracy(series) == pytest.approx(2 / 3)
    with pytest.raises(EmptySeriesError):
        accuracy(_series([]))


def test_alpha_is_exactly_one_for_identical_raters():
    pairs = [(0, 0), (1, 1), (0.5, 0.5), (2, 2)]
    assert krippendorff_alpha(_series(pairs, SCALE_NOMINAL)) == 1.0
    assert krippendorff_alpha(_series(pairs, SCALE_INTERVAL)) == 1.0


def test_alpha_two_binary_raters_in_perfect_opposition():
    series = _series([(0, 1), (1, 0)], SCALE_NOMINAL)
    assert krippendorff_alpha(series) == -0.5


def test_alpha_undefined_when_all_values_identical():
    with pytest.raises(UndefinedAlphaError):
        krippendorff_alpha(_series([(1, 1), (1, 1)]))


def test_alpha_empty_series_is_an_error():
    with pytest.raises(EmptySeriesError):
        krippendorff_alpha(_series([]))


def test_alpha_matches_bruteforce_on_randomized_series():
    rng = random.Random(20260819)
    started = time.monotonic()
    checked = 0
    for case in range(500):
        scale = SCALE_NOMINAL if case % 2 == 0 else SCALE_INTERVAL
        n = rng.randint(2, 50)
        pairs = [(rng.randint(0, 4), rng.randint(0, 4)) for _ in range(n)]
        values = {v for pair in pairs for v in pair}
        if len(values) < 2:
            continue
        fast = krippendorff_alpha(_series(pairs, scale))
        slow = agreement_alpha_bruteforce([[float(a), float(b)] for a, b in pairs], scale)
        assert fast == pytest.approx(slow, abs=1e-9), (case, scale, pairs)
        checked += 1
    assert checked > 400
    assert time.monotonic() - started < 10.0


def test_interval_alpha_is_affine_invariant():
    rng = random.Random(77)
    for _ in range(100):
        n = rng.randint(2, 30)
        pairs = [(rng.randint(0, 4), rng.randint(0, 4)) for _ in range(n)]
        if len({v for pair in pairs for v in pair}) < 2:
            continue
        scale_factor = Fraction(rng.randint(1, 9), rng.randint(1, 9))
        shift = Fraction(rng.randint(-9, 9), rng.randint(1, 9))
        mapped = [
            (scale_factor * a + shift, scale_factor * b + shift)
            for a, b in _series(pairs).pairs
        ]
        original = krippendorff_alpha(_series(pairs, SCALE_INTERVAL))
        transformed = krippendorff_alpha(GradePairSeries(tuple(mapped), SCALE_INTERVAL))
        assert transformed == pytest.approx(original, abs=1e-9)


def test_robustness_alpha_identical_variants_is_exactly_one():
    matrix = [[0, 1, 2, 0.5], [0, 1, 2, 0.5], [0, 1, 2, 0.5]]
    assert robustness_alpha(matrix) == 1.0
    assert robustness_alpha(matrix, SCALE_NOMINAL) == 1.0


def test_robustness_alpha_matches_bruteforce_on_multi_variant_grids():
    rng = random.Random(4242)
    for _ in range(60):
        n_variants = rng.randint(2, 5)
        n_items = rng.randint(2, 20)
        matrix = [
            [rng.choice([0, 0.5, 1, 1.5, 2]) for _ in range(n_items)]
            for _ in range(n_variants)
        ]
        values = {v for row in matrix for v in row}
        if len(values) < 2:
            continue
        units = [[float(row[i]) for row in matrix] for i in range(n_items)]
        for scale in (SCALE_NOMINAL, SCALE_INTERVAL):
            fast = robustness_alpha(matrix, scale)
            slow = agreement_alpha_bruteforce(units, scale)
            assert fast == pytest.approx(slow, abs=1e-9)


def test_robustness_alpha_two_variants_equals_pairwise_alpha():
    matrix = [[0, 1, 2, 1], [0, 2, 2, 1]]
    series = _series(list(zip(matrix[0], matrix[1])))
    assert robustness_alpha(matrix) == pytest.approx(krippendorff_alpha(series), abs=1e-12)


def test_robustness_alpha_validates_shape():
    with pytest.raises(ValidationError):
        robustness_alpha([[1, 2]])
    with pytest.raises(ValidationError):
        robustness_alpha([[1, 2], [1]])
    with pytest.raises(EmptySeriesError):
        robustness_alpha([[], []])


def test_build_contingency_classifies_all_four_cells():
    one = Fraction(1)
    two = Fraction(2)
    items = [
        (can_decide(one), one, one),        # committed, correct
        (can_decide(two), two, one),        # committed, wrong
        (CANNOT_DECIDE, one, one),          # deferred, would have been right
        (CANNOT_DECIDE, two, one),          # deferred, rightly so
        (CANNOT_DECIDE, None, one),         # deferred with no snap at all
    ]
    table = build_contingency(items)
    assert table == ContingencyTable(
        true_positive=1, false_positive=1, false_negative=1, true_negative=2
    )


def test_build_contingency_rejects_unanswered_items():
    with pytest.raises(ValidationError):
        build_contingency([(UNANSWERED, None, Fraction(1))])


def test_contingency_metrics_reference_table():
    metrics = contingency_metrics(
        ContingencyTable(true_positive=68, false_positive=17, false_negative=0, true_negative=15)
    )
    assert metrics.accuracy == pytest.approx(0.83, abs=0.005)
    assert metrics.precision == pytest.approx(0.80, abs=0.005)
    assert metrics.recall == pytest.approx(1.00, abs=0.005)
    assert metrics.f1 == pytest.approx(0.89, abs=0.005)
    assert metrics.fp_rate == pytest.approx(0.17, abs=0.005)


def test_contingency_metrics_zero_denominators_are_none():
    deferred_only = contingency_metrics(
        ContingencyTable(true_positive=0, false_positive=0, false_negative=2, true_negative=3)
    )
    assert deferred_only.precision is None
    assert deferred_only.recall == 0.0
    assert deferred_only.f1 is None
    assert deferred_only.accuracy == pytest.approx(0.6)

    nothing_right = contingency_metrics(
        ContingencyTable(true_positive=0, false_positive=0, false_negative=0, true_negative=4)
    )
    assert nothing_right.recall is None

    with pytest.raises(EmptySeriesError):
        contingency_metrics(ContingencyTable(0, 0, 0, 0))
