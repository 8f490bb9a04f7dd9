"""Objectives, Pareto machinery and feasibility repair for layer masks.

A mask is an ``(N, L)`` boolean array: row ``i`` marks the layers client
``i`` trains. Objectives are the total selected importance (maximized) and
the population variance of per-layer selection counts (minimized).
"""

from __future__ import annotations

import json
from typing import NamedTuple

import numpy as np

from ..errors import ConfigError


class ObjectivePair(NamedTuple):
    importance: float
    variance: float


def selection_counts(mask):
    return np.asarray(mask, dtype=int).sum(axis=-2)


def evaluate(mask, S):
    mask = np.asarray(mask, dtype=bool)
    S = np.asarray(S, dtype=float)
    if mask.shape != S.shape:
        raise ConfigError(f"mask shape {mask.shape} does not match importance shape {S.shape}")
    counts = mask.sum(axis=0)
    return ObjectivePair(float(S[mask].sum()), float(np.mean((counts - counts.mean()) ** 2)))


def evaluate_batch(masks, S):
    """Objectives for a stack of masks ``(P, N, L)``; returns two ``(P,)`` arrays."""
    masks = np.asarray(masks, dtype=bool)
    imp = np.einsum("pnl,nl->p", masks, S)
    counts = masks.sum(axis=1)
    var = counts.var(axis=1)
    return imp, var


def dominates(a, b):
    """True iff ``a`` has >= importance and <= variance, one of them strictly."""
    return (a[0] >= b[0] and a[1] <= b[1]) and (a[0] > b[0] or a[1] < b[1])


def _dominance_matrix(points):
    imp, var = points[:, 0], points[:, 1]
    ge = imp[:, None] >= imp[None, :]
    le = var[:, None] <= var[None, :]
    strict = (imp[:, None] > imp[None, :]) | (var[:, None] < var[None, :])
    return ge & le & strict


def non_dominated_sort(points):
    """Partition point indices into successive non-dominated fronts."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    dom = _dominance_matrix(points)
    dominated_by = dom.sum(axis=0)
    remaining = np.ones(len(points), dtype=bool)
    fronts = []
    while remaining.any():
        front = np.flatnonzero(remaining & (dominated_by == 0))
        fronts.append(front)
        remaining[front] = False
        dominated_by = dominated_by - dom[front].sum(axis=0)
    return fronts


def crowding_distance(points):
    """Crowding distance of each point within one front.

    Extreme points of either objective get ``inf``; interior points sum the
    normalized side lengths of their neighbours' cuboid.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(points)
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for m in range(2):
        order = np.argsort(points[:, m], kind="stable")
        vals = points[order, m]
        span = vals[-1] - vals[0]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span > 0:
            dist[order[1:-1]] += (vals[2:] - vals[:-2]) / span
    return dist


def rank_and_crowding(points):
    ranks = np.empty(len(points), dtype=int)
    crowd = np.empty(len(points))
    for r, front in enumerate(non_dominated_sort(points)):
        ranks[front] = r
        crowd[front] = crowding_distance(points[front])
    return ranks, crowd


def check_budgets(budgets, L, N=None):
    budgets = np.asarray(budgets, dtype=int).ravel()
    if N is not None and len(budgets) != N:
        raise ConfigError(f"need {N} budgets, got {len(budgets)}")
    if budgets.min() < 1:
        raise ConfigError("every budget must be >= 1")
    return budgets


def is_feasible(mask, budgets):
    rows = np.asarray(mask, dtype=int).sum(axis=-1)
    return bool(np.all((rows >= 1) & (rows <= np.asarray(budgets))))


def top_k_mask(scores, budgets):
    """Per row, select the ``budgets[i]`` highest scores; ties go to lower indices."""
    scores = np.asarray(scores, dtype=float)
    order = np.argsort(-scores, axis=-1, kind="stable")
    ranks = np.argsort(order, axis=-1, kind="stable")
    return ranks < np.asarray(budgets)[..., :, None]


def greedy_mask(S, budgets):
    return top_k_mask(S, budgets)


def repair(mask, S, budgets):
    """Make a mask (or a stack of masks) budget-feasible.

    Over-budget rows keep their highest-importance selected layers; empty
    rows get their single highest-importance layer. Ties go to the lower
    layer index.
    """
    mask = np.asarray(mask, dtype=bool)
    S = np.asarray(S, dtype=float)
    keyed = np.where(mask, S, -np.inf)
    order = np.argsort(-keyed, axis=-1, kind="stable")
    ranks = np.argsort(order, axis=-1, kind="stable")
    out = mask & (ranks < np.asarray(budgets)[:, None])
    empty = ~out.any(axis=-1)
    if empty.any():
        best = np.zeros(S.shape, dtype=bool)
        best[np.arange(S.shape[0]), np.argmax(S, axis=-1)] = True
        out = np.where(empty[..., None], best, out)
    return out


def knee_index(points):
    """Index of the knee point: closest to the ideal after min-max normalization.

    Importance is rescaled so the best archive value is 1, variance so the
    best is 0; ties prefer higher importance, then the earlier entry.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    imp = np.where(hi[0] > lo[0], (points[:, 0] - lo[0]) / span[0], 1.0)
    var = np.where(hi[1] > lo[1], (points[:, 1] - lo[1]) / span[1], 0.0)
    dist = np.hypot(1.0 - imp, var)
    best = dist.min()
    tied = np.flatnonzero(dist <= best + 1e-12)
    return int(tied[np.argmax(points[tied, 0])])


class ParetoArchive:
    """Bounded set of mutually non-dominated ``(objectives, mask)`` entries.

    With ``use_variance=False`` dominance compares importance only, so the
    archive collapses to the best-importance entry. Entries with objectives
    identical to an existing entry are not added. Overflow drops the most
    crowded entry, one at a time.
    """

    def __init__(self, capacity=50, use_variance=True):
        if capacity < 1:
            raise ConfigError("archive capacity must be >= 1")
        self.capacity = int(capacity)
        self.use_variance = use_variance
        self._points = np.empty((0, 2))
        self._masks = []

    def __len__(self):
        return len(self._masks)

    def __iter__(self):
        return iter(zip(self.objectives, self._masks))

    @property
    def points(self):
        return self._points.copy()

    @property
    def objectives(self):
        return [ObjectivePair(float(a), float(b)) for a, b in self._points]

    @property
    def masks(self):
        return list(self._masks)

    def _key(self, pts):
        pts = np.atleast_2d(pts)
        return pts if self.use_variance else np.column_stack([pts[:, 0], np.zeros(len(pts))])

    def add(self, mask, objectives):
        """Insert a candidate; returns True if it entered the archive."""
        cand = np.array([float(objectives[0]), float(objectives[1])])
        if len(self._masks):
            keys = self._key(self._points)
            c = self._key(cand)[0]
            weakly = (keys[:, 0] >= c[0]) & (keys[:, 1] <= c[1])
            if weakly.any():
                return False
            beaten = (c[0] >= keys[:, 0]) & (c[1] <= keys[:, 1])
            if beaten.any():
                keep = ~beaten
                self._points = self._points[keep]
                self._masks = [m for m, k in zip(self._masks, keep) if k]
        self._points = np.vstack([self._points, cand])
        self._masks.append(np.array(mask, dtype=bool))
        while len(self._masks) > self.capacity:
            self._drop_most_crowded()
        return True

    def add_many(self, masks, imp, var):
        """Offer several candidates; returns the indices that entered."""
        imp = np.asarray(imp, dtype=float)
        var = np.asarray(var, dtype=float)
        if len(self._masks) and len(imp):
            # drop candidates already weakly dominated by the archive in one pass
            keys = self._key(self._points)
            cand = self._key(np.column_stack([imp, var]))
            weakly = (keys[None, :, 0] >= cand[:, None, 0]) & (keys[None, :, 1] <= cand[:, None, 1])
            todo = np.flatnonzero(~weakly.any(axis=1))
        else:
            todo = np.arange(len(imp))
        return [int(j) for j in todo if self.add(masks[j], (imp[j], var[j]))]

    def _drop_most_crowded(self):
        dist = crowding_distance(self._key(self._points))
        worst = np.flatnonzero(dist == dist.min())[-1]
        self._points = np.delete(self._points, worst, axis=0)
        del self._masks[worst]

    def crowding(self):
        return crowding_distance(self._key(self._points))

    def knee(self):
        if not self._masks:
            raise ConfigError("empty archive has no knee point")
        return knee_index(self._key(self._points))

    def to_records(self):
        return [
            {"importance": float(p[0]), "variance": float(p[1]), "mask": m.astype(int).tolist()}
            for p, m in zip(self._points, self._masks)
        ]

    def to_json(self):
        return json.dumps(self.to_records(), sort_keys=True)
