"""Front quality and selection statistics over completed runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def _as_points(archive):
    if archive is None:
        return np.empty((0, 2))
    pts = getattr(archive, "points", archive)
    return np.asarray(pts, dtype=float).reshape(-1, 2)


def hypervolume(archive, reference):
    """Area dominated by (importance, variance) points, bounded by ``reference``.

    Importance is maximized and variance minimized, so every point must have
    importance above ``reference[0]`` and variance below ``reference[1]``.
    """
    pts = _as_points(archive)
    if len(pts) == 0:
        return 0.0
    ref_imp, ref_var = float(reference[0]), float(reference[1])
    if np.any(pts[:, 0] <= ref_imp) or np.any(pts[:, 1] >= ref_var):
        raise ConfigError("reference point must be dominated by every point")
    # sweep by variance ascending; keep a point only if it raises the importance level
    order = np.lexsort((-pts[:, 0], pts[:, 1]))
    area, level = 0.0, ref_imp
    staircase = []
    for imp, var in pts[order]:
        if imp > level:
            staircase.append((imp, var))
            level = imp
    for j, (imp, var) in enumerate(staircase):
        below = ref_imp if j == 0 else staircase[j - 1][0]
        area += (imp - below) * (ref_var - var)
    return float(area)


@dataclass(frozen=True)
class FrontScale:
    """Min-max normalization of (importance, variance) taken from a reference front."""

    imp_lo: float
    imp_hi: float
    var_lo: float
    var_hi: float
    margin: float = 0.1

    @classmethod
    def from_points(cls, points, margin=0.1):
        pts = _as_points(points)
        return cls(pts[:, 0].min(), pts[:, 0].max(), pts[:, 1].min(), pts[:, 1].max(), margin)

    def normalize(self, points):
        pts = _as_points(points)
        imp_span = self.imp_hi - self.imp_lo or 1.0
        var_span = self.var_hi - self.var_lo or 1.0
        return np.column_stack([(pts[:, 0] - self.imp_lo) / imp_span, (pts[:, 1] - self.var_lo) / var_span])

    @property
    def reference(self):
        return (-self.margin, 1.0 + self.margin)

    def hypervolume(self, points):
        """Normalized hypervolume; points outside the reference box are ignored."""
        norm = self.normalize(points)
        ref = self.reference
        inside = (norm[:, 0] > ref[0]) & (norm[:, 1] < ref[1])
        return hypervolume(norm[inside], ref)


def hypervolume_ratio(points, front_points, margin=0.1):
    """Hypervolume of ``points`` relative to a reference front, both normalized by the front."""
    scale = FrontScale.from_points(front_points, margin)
    return scale.hypervolume(points) / scale.hypervolume(front_points)


def budget_scaled_hypervolume(points, S, budgets):
    """Hypervolume in fixed per-instance units, comparable across solvers.

    Importance is divided by the greedy (per-client top-b) importance and
    variance by ``N^2 / 4`` (the largest possible count variance); the
    reference point is ``(0, 1)``.
    """
    from .selector import evaluate, greedy_mask

    S = np.asarray(S, dtype=float)
    g = evaluate(greedy_mask(S, budgets), S)
    pts = _as_points(points)
    if len(pts) == 0:
        return 0.0
    N = S.shape[0]
    norm = np.column_stack([pts[:, 0] / g.importance, pts[:, 1] / (N * N / 4.0)])
    inside = (norm[:, 0] > 0) & (norm[:, 1] < 1)
    return hypervolume(norm[inside], (0.0, 1.0))


def dense_rank(values):
    """Dense ranks, 1 for the largest value; ties share a rank (1, 2, 2, 3)."""
    values = np.asarray(values, dtype=float)
    uniq = np.unique(values)[::-1]
    return np.searchsorted(-uniq, -values) + 1


def rank_heatmap(rows):
    """Dense layer ranks for each row of a ``(rounds, L)`` score matrix."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    return np.array([dense_rank(r) for r in rows])


@dataclass(frozen=True)
class SelectionHistogram:
    counts: np.ndarray  # (rounds, L) per-round selection counts n_l

    @classmethod
    def from_masks(cls, masks):
        masks = [np.asarray(m, dtype=int) for m in masks]
        if not masks:
            return cls(np.zeros((0, 0), dtype=int))
        return cls(np.array([m.sum(axis=0) for m in masks]))

    @classmethod
    def from_records(cls, records):
        if not records:
            return cls(np.zeros((0, 0), dtype=int))
        return cls(np.array([r.counts for r in records], dtype=int))

    @property
    def cumulative(self):
        return self.counts.sum(axis=0) if self.counts.size else np.zeros(0, dtype=int)

    @property
    def variance_series(self):
        if not self.counts.size:
            return np.zeros(0)
        return self.counts.var(axis=1)


def rounds_to_target(losses, target):
    """First 1-based round whose loss is at or below ``target``; ``len + 1`` if never."""
    losses = np.asarray(losses, dtype=float)
    hit = np.flatnonzero(losses <= target)
    return int(hit[0]) + 1 if len(hit) else len(losses) + 1
