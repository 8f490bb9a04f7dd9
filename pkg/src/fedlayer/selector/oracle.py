"""Exhaustive Pareto fronts for small assignment instances."""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .core import evaluate_batch, non_dominated_sort


def row_options(L, budget, exact=True):
    sizes = [budget] if exact else range(1, budget + 1)
    rows = []
    for size in sizes:
        for combo in combinations(range(L), size):
            row = np.zeros(L, dtype=bool)
            row[list(combo)] = True
            rows.append(row)
    return np.array(rows)


def enumerate_masks(L, budgets, exact=True):
    """Every mask whose rows use exactly (or at most) their budget."""
    options = [row_options(L, int(b), exact) for b in budgets]
    grids = np.meshgrid(*[np.arange(len(o)) for o in options], indexing="ij")
    idx = [g.ravel() for g in grids]
    return np.stack([opt[i] for opt, i in zip(options, idx)], axis=1)


def true_front(S, budgets, exact=True):
    """``(points, masks)`` of the exact front, sorted by importance."""
    S = np.asarray(S, dtype=float)
    masks = enumerate_masks(S.shape[1], budgets, exact)
    imp, var = evaluate_batch(masks, S)
    pts = np.column_stack([imp, var])
    front = non_dominated_sort(pts)[0]
    # one representative per distinct objective pair
    _, first = np.unique(pts[front], axis=0, return_index=True)
    front = front[np.sort(first)]
    order = np.argsort(pts[front, 0], kind="stable")
    front = front[order]
    return pts[front], masks[front]


def random_instance(N, L, seed):
    """Row-stochastic importance matrix with Dirichlet(1) rows."""
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(L), size=N)
