"""Server-side refinement of per-client layer selections."""

from __future__ import annotations

import logging
import warnings

import numpy as np

from ..errors import ConfigError
from .algorithms import RUNNERS, Problem
from .baselines import BASELINE_KINDS, baseline_select, layer_magnitudes, relative_grad_norms
from .config import ALGORITHMS, BASELINES, META_HEURISTICS, SolverConfig
from .core import (
    ObjectivePair,
    ParetoArchive,
    check_budgets,
    crowding_distance,
    dominates,
    evaluate,
    evaluate_batch,
    greedy_mask,
    is_feasible,
    knee_index,
    non_dominated_sort,
    repair,
    selection_counts,
    top_k_mask,
)

log = logging.getLogger(__name__)


def clamp_budgets(budgets, L):
    budgets = check_budgets(budgets, L)
    if budgets.max() > L:
        warnings.warn(f"budgets above the layer count {L} clamped to {L}", stacklevel=3)
        budgets = np.minimum(budgets, L)
    return budgets


def solve(S, budgets, config=None, init_masks=(), trace=None):
    """Search budget-feasible masks trading importance against selection variance.

    Returns ``(archive, chosen)``: the Pareto archive of every mask the
    search evaluated, and its knee point. ``init_masks`` seeds the search
    (warm start); ``trace``, if a list, receives one record per iteration.
    """
    config = config or SolverConfig()
    if config.algorithm not in META_HEURISTICS:
        raise ConfigError(f"solve() runs meta-heuristics {META_HEURISTICS}; got {config.algorithm!r}")
    S = np.asarray(getattr(S, "scores", S), dtype=float)
    if S.ndim != 2:
        raise ConfigError(f"importance matrix must be 2-D, got shape {S.shape}")
    if np.any(S < 0) or not np.allclose(S.sum(axis=1), 1.0, atol=1e-6):
        raise ConfigError("importance rows must be non-negative and sum to one")
    budgets = clamp_budgets(budgets, S.shape[1])
    if len(budgets) != S.shape[0]:
        raise ConfigError(f"need {S.shape[0]} budgets, got {len(budgets)}")
    problem = Problem(S, budgets, config, init_masks, trace)
    RUNNERS[config.algorithm](problem)
    archive = problem.archive
    knee = archive.knee()
    chosen = archive.masks[knee]
    log.debug("%s: archive of %d, knee %s", config.algorithm, len(archive), archive.objectives[knee])
    return archive, chosen


__all__ = [
    "ALGORITHMS",
    "BASELINES",
    "BASELINE_KINDS",
    "META_HEURISTICS",
    "ObjectivePair",
    "ParetoArchive",
    "SolverConfig",
    "baseline_select",
    "clamp_budgets",
    "crowding_distance",
    "dominates",
    "evaluate",
    "evaluate_batch",
    "greedy_mask",
    "is_feasible",
    "knee_index",
    "layer_magnitudes",
    "non_dominated_sort",
    "relative_grad_norms",
    "repair",
    "selection_counts",
    "solve",
    "top_k_mask",
]
