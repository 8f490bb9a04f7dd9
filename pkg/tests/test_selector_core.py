import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedlayer.errors import ConfigError
from fedlayer.model import build_model
from fedlayer.selector import (
    ParetoArchive,
    baseline_select,
    crowding_distance,
    dominates,
    evaluate,
    evaluate_batch,
    is_feasible,
    knee_index,
    layer_magnitudes,
    non_dominated_sort,
    relative_grad_norms,
    repair,
    top_k_mask,
)
from fedlayer.selector.oracle import enumerate_masks, random_instance, true_front

from oracles import brute_dominates, brute_fronts, enumerate_all_masks, reference_crowding, reference_objectives

pairs = st.tuples(st.floats(0, 5, allow_nan=False), st.floats(0, 5, allow_nan=False))


def test_distinct_single_layers_zero_variance():
    obj = evaluate(np.eye(3, dtype=bool), np.full((3, 3), 1 / 3))
    assert obj.variance == 0


def test_all_on_first_layer():
    mask = np.zeros((3, 3), dtype=bool)
    mask[:, 0] = True
    S = np.random.default_rng(0).dirichlet(np.ones(3), size=3)
    obj = evaluate(mask, S)
    assert obj.variance == pytest.approx(2.0)
    assert obj.importance == pytest.approx(S[:, 0].sum())


def test_uniform_scores_closed_form():
    rng = np.random.default_rng(1)
    budgets = np.array([1, 3, 2, 4])
    S = np.full((4, 6), 1 / 6)
    for _ in range(5):
        mask = top_k_mask(rng.random((4, 6)), budgets)
        assert evaluate(mask, S).importance == pytest.approx(budgets.sum() / 6, abs=1e-12)


def test_evaluate_shape_mismatch():
    with pytest.raises(ConfigError):
        evaluate(np.ones((2, 3)), np.ones((3, 3)) / 3)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_evaluate_matches_reference(seed):
    rng = np.random.default_rng(seed)
    S = rng.dirichlet(np.ones(5), size=3)
    mask = rng.random((3, 5)) < 0.5
    imp, var = reference_objectives(mask, S)
    obj = evaluate(mask, S)
    assert obj.importance == pytest.approx(imp, abs=1e-12)
    assert obj.variance == pytest.approx(var, abs=1e-12)
    bi, bv = evaluate_batch(mask[None], S)
    assert bi[0] == pytest.approx(imp, abs=1e-12) and bv[0] == pytest.approx(var, abs=1e-12)


@pytest.mark.parametrize("a, b, expected", [((4, 0.5), (3, 1), True), ((3, 1), (3, 1), False), ((4, 2), (3, 1), False)])
def test_dominates_examples(a, b, expected):
    assert dominates(a, b) is expected


@settings(max_examples=100, deadline=None)
@given(a=pairs, b=pairs)
def test_dominance_antisymmetric(a, b):
    assert not (dominates(a, b) and dominates(b, a))
    assert dominates(a, b) == brute_dominates(a, b)


def test_sort_total_order():
    fronts = non_dominated_sort([(4, 0.5), (3, 1), (2, 2), (1, 3)])
    assert [f.tolist() for f in fronts] == [[0], [1], [2], [3]]


def test_sort_incomparable_pair():
    fronts = non_dominated_sort([(4, 2), (3, 1)])
    assert len(fronts) == 1 and sorted(fronts[0].tolist()) == [0, 1]


@pytest.mark.parametrize("seed", range(5))
def test_sort_matches_pairwise_oracle(seed):
    pts = np.round(np.random.default_rng(seed).random((8, 2)) * 4) / 4
    got = [sorted(f.tolist()) for f in non_dominated_sort(pts)]
    assert got == brute_fronts([tuple(p) for p in pts])


def test_crowding_two_points_infinite():
    assert np.all(np.isinf(crowding_distance([(1, 1), (2, 2)])))


def test_crowding_collinear_middle_is_two():
    d = crowding_distance([(0, 0), (1, 1), (2, 2)])
    assert np.isinf(d[0]) and np.isinf(d[2])
    assert d[1] == pytest.approx(2.0)


@pytest.mark.parametrize("seed", range(5))
def test_crowding_matches_reference(seed):
    pts = np.random.default_rng(seed).random((5, 2))
    np.testing.assert_allclose(crowding_distance(pts), reference_crowding(pts))


def test_repair_trims_to_top_scores():
    S = np.array([[0.05, 0.3, 0.1, 0.25, 0.2, 0.1]])
    mask = np.array([[1, 1, 1, 1, 1, 0]], dtype=bool)
    out = repair(mask, S, [3])
    assert out[0].tolist() == [False, True, False, True, True, False]


def test_repair_tie_prefers_lower_index():
    S = np.full((1, 4), 0.25)
    out = repair(np.ones((1, 4), dtype=bool), S, [2])
    assert out[0].tolist() == [True, True, False, False]


def test_repair_idempotent_on_feasible():
    rng = np.random.default_rng(0)
    S = rng.dirichlet(np.ones(6), size=4)
    mask = top_k_mask(rng.random((4, 6)), [2, 2, 3, 1])
    assert np.array_equal(repair(mask, S, [2, 2, 3, 1]), mask)


def test_repair_empty_row_gets_argmax():
    S = np.array([[0.1, 0.6, 0.3], [0.5, 0.2, 0.3]])
    out = repair(np.zeros((2, 3), dtype=bool), S, [2, 2])
    assert out.tolist() == [[False, True, False], [True, False, False]]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_repair_always_feasible(seed):
    rng = np.random.default_rng(seed)
    S = rng.dirichlet(np.ones(7), size=4)
    budgets = rng.integers(1, 8, size=4)
    out = repair(rng.random((4, 7)) < rng.random(), S, budgets)
    assert is_feasible(out, budgets)


def test_knee_prefers_balanced_point():
    pts = [(1.0, 1.0), (0.9, 0.1), (0.0, 0.0)]
    assert knee_index(pts) == 1


def test_knee_tie_goes_to_higher_importance():
    # (1, 1) and (0, 0) are both at distance 1 from the ideal (1, 0)
    assert knee_index([(0.0, 0.0), (1.0, 1.0)]) == 1


def test_knee_scale_invariant():
    pts = np.random.default_rng(2).random((10, 2))
    assert knee_index(pts) == knee_index(pts * 7.5)


def test_archive_sound_and_bounded():
    rng = np.random.default_rng(3)
    arch = ParetoArchive(capacity=10)
    S = rng.dirichlet(np.ones(6), size=3)
    for _ in range(500):
        m = repair(rng.random((3, 6)) < 0.4, S, [2, 2, 2])
        arch.add(m, evaluate(m, S))
    pts = arch.points
    assert len(arch) <= 10
    for i in range(len(pts)):
        for j in range(len(pts)):
            assert not dominates(pts[i], pts[j])
    for obj, m in arch:
        assert evaluate(m, S) == pytest.approx(obj)
    json.loads(arch.to_json())


def test_archive_rejects_duplicates_and_dominated():
    arch = ParetoArchive()
    m = np.eye(2, dtype=bool)
    assert arch.add(m, (1.0, 0.5))
    assert not arch.add(m, (1.0, 0.5))
    assert not arch.add(m, (0.9, 0.6))
    assert arch.add(m, (1.2, 0.4))
    assert len(arch) == 1


def test_archive_add_many_matches_add():
    rng = np.random.default_rng(4)
    S = rng.dirichlet(np.ones(5), size=3)
    masks = [repair(rng.random((3, 5)) < 0.5, S, [2, 2, 2]) for _ in range(200)]
    imp, var = evaluate_batch(np.array(masks), S)
    a, b = ParetoArchive(capacity=8), ParetoArchive(capacity=8)
    for m, i, v in zip(masks, imp, var):
        a.add(m, (i, v))
    b.add_many(masks, imp, var)
    np.testing.assert_array_equal(a.points, b.points)


def test_archive_importance_only_mode():
    arch = ParetoArchive(use_variance=False)
    m = np.eye(2, dtype=bool)
    arch.add(m, (1.0, 0.0))
    arch.add(m, (1.5, 3.0))
    assert len(arch) == 1 and arch.points[0, 0] == 1.5


@settings(max_examples=30, deadline=None)
@given(pts=st.lists(pairs, min_size=1, max_size=20))
def test_archive_never_self_dominated(pts):
    arch = ParetoArchive(capacity=5)
    for p in pts:
        arch.add(np.zeros((1, 1), dtype=bool), p)
    stored = arch.points
    assert all(not dominates(a, b) for a in stored for b in stored)


def test_enumeration_count_and_oracle_agreement():
    masks = enumerate_masks(6, [2, 2, 2])
    assert len(masks) == 3375
    ref = {m.tobytes() for m in enumerate_all_masks(6, [2, 2, 2])}
    assert {m.tobytes() for m in masks} == ref


def test_true_front_matches_brute_force():
    S = random_instance(2, 4, seed=5)
    pts, masks = true_front(S, [2, 2])
    objs = [reference_objectives(m, S) for m in enumerate_all_masks(4, [2, 2])]
    front = {objs[i] for i in brute_fronts(objs)[0]}
    assert {tuple(np.round(p, 12)) for p in pts} == {tuple(np.round(p, 12)) for p in front}
    for p, m in zip(pts, masks):
        assert evaluate(m, S) == pytest.approx(p)


def test_under_budget_masks_never_on_front():
    # with N*b <= L an extra layer fills an empty column: more importance, less variance
    S = random_instance(3, 6, seed=1)
    exact, _ = true_front(S, [2, 2, 2], exact=True)
    loose, _ = true_front(S, [2, 2, 2], exact=False)
    np.testing.assert_allclose(exact, loose)


def test_baseline_last_k():
    mask = baseline_select("last_k", [4], n_layers=12)
    assert np.flatnonzero(mask[0]).tolist() == [8, 9, 10, 11]


def test_baseline_lntk_only_argmax():
    S = np.array([[0.5, 0.3, 0.2, 0.0]])
    assert np.flatnonzero(baseline_select("lntk_only", [2], S)[0]).tolist() == [0, 1]


def test_baseline_random_seeded():
    a = baseline_select("random_k", [3, 2], seed=4, n_layers=8)
    b = baseline_select("random_k", [3, 2], seed=4, n_layers=8)
    c = baseline_select("random_k", [3, 2], seed=5, n_layers=8)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert a.sum(axis=1).tolist() == [3, 2]


def test_baseline_magnitude_and_grad_norm():
    model = build_model(4, 5, 2, seed=0, input_dim=3)
    mags = layer_magnitudes(model)
    mask = baseline_select("magnitude", [2], mags[None])
    assert set(np.flatnonzero(mask[0])) == set(np.argsort(-mags)[:2])
    from fedlayer.data import ProbeBatch, one_hot
    from fedlayer.model import loss_and_layer_grads

    rng = np.random.default_rng(0)
    batch = ProbeBatch(rng.normal(size=(6, 3)), one_hot(rng.integers(0, 2, 6), 2))
    _, grads = loss_and_layer_grads(model, batch, "cross_entropy")
    rgn = relative_grad_norms(grads, model)
    expected = [np.linalg.norm(g) / np.linalg.norm(l.params) for g, l in zip(grads, model.layers)]
    np.testing.assert_allclose(rgn, expected)
    assert is_feasible(baseline_select("grad_norm", [3], rgn[None]), [3])


def test_baseline_unknown_kind():
    with pytest.raises(ConfigError):
        baseline_select("oracle", [1], np.ones((1, 2)) / 2)
