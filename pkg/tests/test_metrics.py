import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedlayer.errors import ConfigError
from fedlayer.metrics import (
    SelectionHistogram,
    budget_scaled_hypervolume,
    dense_rank,
    hypervolume,
    hypervolume_ratio,
    rank_heatmap,
    rounds_to_target,
)
from fedlayer.selector import ParetoArchive, non_dominated_sort

from oracles import grid_hypervolume


def test_unit_box():
    assert hypervolume([(1.0, 0.0)], (0.0, 1.0)) == 1.0


def test_empty_is_zero():
    assert hypervolume([], (0.0, 1.0)) == 0.0
    assert hypervolume(ParetoArchive(), (0.0, 1.0)) == 0.0


def test_invalid_reference():
    with pytest.raises(ConfigError):
        hypervolume([(0.5, 0.5)], (0.6, 1.0))


@pytest.mark.parametrize("seed", range(5))
def test_matches_grid_integration(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((40, 2))
    front = pts[non_dominated_sort(pts)[0]][:4]
    assert len(front) >= 2
    ref = (0.0, 1.0)
    assert hypervolume(front, ref) == pytest.approx(grid_hypervolume(front, ref), abs=5e-3)


def test_dominated_points_do_not_count():
    assert hypervolume([(0.8, 0.2), (0.5, 0.5)], (0, 1)) == pytest.approx(0.8 * 0.8)


@settings(max_examples=40, deadline=None)
@given(
    pts=st.lists(st.tuples(st.floats(0.01, 1), st.floats(0, 0.99)), min_size=1, max_size=10),
    new=st.tuples(st.floats(0.01, 1), st.floats(0, 0.99)),
)
def test_adding_a_point_never_decreases(pts, new):
    assert hypervolume(pts + [new], (0, 1)) >= hypervolume(pts, (0, 1)) - 1e-12


def test_ratio_of_front_with_itself():
    pts = np.array([(1.0, 0.0), (2.0, 1.0), (3.0, 4.0)])
    assert hypervolume_ratio(pts, pts) == pytest.approx(1.0)
    assert hypervolume_ratio(pts[:1], pts) < 1.0


def test_budget_scaled_greedy_point():
    S = np.array([[0.6, 0.3, 0.1], [0.5, 0.4, 0.1]])
    # the greedy mask for budget 1: importance 1.1, counts (2, 0, 0)
    hv = budget_scaled_hypervolume([(1.1, np.var([2, 0, 0]))], S, [1, 1])
    assert hv == pytest.approx(1.0 * (1 - np.var([2, 0, 0]) / (4 / 4)))


def test_dense_rank_ties():
    assert dense_rank([0.4, 0.1, 0.4, 0.3]).tolist() == [1, 3, 1, 2]
    assert rank_heatmap([[1, 2, 2], [3, 1, 2]]).tolist() == [[2, 1, 1], [1, 3, 2]]


def test_histogram_conservation():
    rng = np.random.default_rng(0)
    budgets = np.array([3, 1, 2])
    masks = []
    for _ in range(7):
        m = np.zeros((3, 5), dtype=bool)
        for i, b in enumerate(budgets):
            m[i, rng.choice(5, size=b, replace=False)] = True
        masks.append(m)
    hist = SelectionHistogram.from_masks(masks)
    assert hist.cumulative.sum() == budgets.sum() * 7
    assert np.all(hist.counts.sum(axis=1) == [m.sum() for m in masks])
    recomputed = [np.mean((c - c.mean()) ** 2) for c in hist.counts]
    np.testing.assert_allclose(hist.variance_series, recomputed, atol=1e-12)


def test_rounds_to_target():
    assert rounds_to_target([3, 2, 1, 0.5], 1.0) == 3
    assert rounds_to_target([3, 2], 1.0) == 3
