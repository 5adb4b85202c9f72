import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fmcorr.evaluation import (DEFAULT_THRESHOLDS, cmc_curve, error_summary, match_distance_histogram,
                               match_ranks, princeton_curve)


def test_two_error_example():
    c = princeton_curve([0.1, 0.3], [0.0, 0.2, 0.4])
    np.testing.assert_array_equal(c.fractions, [0.0, 0.5, 1.0])


def test_threshold_is_inclusive():
    assert princeton_curve([0.2], [0.2]).fractions[0] == 1.0
    assert princeton_curve([0.0, 0.0, 1.0]).fractions[0] == pytest.approx(2 / 3)


def test_default_grid():
    c = princeton_curve([0.05])
    assert len(c.thresholds) == 256 and c.thresholds[0] == 0.0 and c.thresholds[-1] == 0.25
    np.testing.assert_array_equal(c.thresholds, DEFAULT_THRESHOLDS)


def test_matches_sort_and_count_oracle(rng):
    errors = rng.exponential(0.08, size=1000)
    t = np.linspace(0, 0.3, 41)
    expected = [sum(1 for e in errors if e <= ti) / len(errors) for ti in t]
    np.testing.assert_allclose(princeton_curve(errors, t).fractions, expected, atol=0)
    perm = rng.permutation(1000)
    np.testing.assert_array_equal(princeton_curve(errors[perm], t).fractions,
                                  princeton_curve(errors, t).fractions)


def test_curve_validation():
    with pytest.raises(ValueError, match="empty"):
        princeton_curve([])
    with pytest.raises(ValueError, match="ascending"):
        princeton_curve([0.1], [0.2, 0.1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=50))
def test_curve_monotone_and_bounded(errors):
    f = princeton_curve(errors, np.linspace(0, 1, 21)).fractions
    assert np.all(np.diff(f) >= 0)
    assert f[-1] == 1.0 and np.all((f >= 0) & (f <= 1))


def test_csv_and_json_round_trip():
    c = princeton_curve([0.1, 0.3], [0.0, 0.2, 0.4])
    lines = c.to_csv().splitlines()
    assert lines[0] == "threshold,fraction" and lines[2] == "0.2,0.5"
    assert json.loads(c.to_json())["fractions"] == [0.0, 0.5, 1.0]


# --- CMC ----------------------------------------------------------------------


def brute_force_cmc(F, G, truth, max_rank):
    hits = np.zeros(max_rank)
    for x, y in enumerate(truth):
        d = [np.linalg.norm(F[x] - G[j]) for j in range(len(G))]
        order = sorted(range(len(G)), key=lambda j: (d[j], j))
        rank = order.index(y) + 1
        hits[rank - 1:] += 1
    return hits / len(truth)


def test_cmc_matches_brute_force(rng):
    F = rng.normal(size=(30, 5))
    G = F[rng.permutation(30)] + 0.8 * rng.normal(size=(30, 5))
    truth = rng.permutation(30)
    c = cmc_curve(F, G, truth)
    np.testing.assert_allclose(c.fractions, brute_force_cmc(F, G, truth, 30), atol=1e-15)
    np.testing.assert_array_equal(c.thresholds, np.arange(1, 31))


def test_cmc_perfect_descriptors(rng):
    F = rng.normal(size=(20, 4))
    c = cmc_curve(F, F, np.arange(20))
    assert c.fractions[0] == 1.0


def test_cmc_limits(rng):
    F, G = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    assert cmc_curve(F, G, np.arange(10)).fractions[-1] == 1.0
    assert len(cmc_curve(F, G, np.arange(10), max_rank=4).fractions) == 4
    with pytest.raises(ValueError, match="max_rank"):
        cmc_curve(F, G, np.arange(10), max_rank=11)


def test_ranks_ignore_unmapped_and_break_ties_by_index():
    F = np.zeros((3, 2))
    G = np.zeros((4, 2))
    r = match_ranks(F, G, np.array([2, -1, 0]))
    np.testing.assert_array_equal(r, [3, 1])


# --- histograms ---------------------------------------------------------------


def test_histogram_two_bins():
    F = np.array([[0.0], [0.0], [0.0]])
    G = np.array([[1.0], [4.0], [3.0]])
    h = match_distance_histogram(F, G, np.arange(3), bins=2)
    np.testing.assert_array_equal(h.edges, [0.0, 2.0, 4.0])
    np.testing.assert_array_equal(h.counts, [1, 2])
    assert h.to_csv().splitlines()[1] == "0.0,2.0,1"


def test_histogram_total_and_identical(rng):
    F = rng.normal(size=(25, 3))
    truth = np.where(np.arange(25) % 5 == 0, -1, np.arange(25))
    h = match_distance_histogram(F, rng.normal(size=(25, 3)), truth, bins=7)
    assert h.counts.sum() == 20
    same = match_distance_histogram(F, F, np.arange(25), bins=4)
    assert same.counts[0] == 25
    with pytest.raises(ValueError):
        match_distance_histogram(F, F, np.arange(25), bins=0)


def test_error_summary():
    s = error_summary([0.0, 0.5, 0.1, 0.0])
    assert s == {"count": 4, "mean": pytest.approx(0.15), "max": 0.5, "fraction_at_zero": 0.5}
