"""Client-side selection rules without server refinement."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .core import top_k_mask

BASELINE_KINDS = ("last_k", "random_k", "magnitude", "grad_norm", "lntk_only")


def baseline_select(kind, budgets, signals=None, seed=0, n_layers=None):
    """Per-client masks from a fixed rule.

    ``last_k`` takes the deepest ``b_i`` layers and ``random_k`` a seeded
    uniform choice; they need ``n_layers`` unless ``signals`` is given.
    The other kinds take the top ``b_i`` layers of an ``(N, L)`` signal:
    mean absolute weight (``magnitude``), relative gradient norm
    (``grad_norm``) or the importance matrix (``lntk_only``).
    """
    budgets = np.asarray(budgets, dtype=int)
    if kind not in BASELINE_KINDS:
        raise ConfigError(f"unknown baseline {kind!r}; expected one of {BASELINE_KINDS}")
    if signals is not None:
        signals = np.asarray(signals, dtype=float)
        if signals.ndim == 1:
            signals = np.broadcast_to(signals, (len(budgets), len(signals)))
        n_layers = signals.shape[1]
    if n_layers is None:
        raise ConfigError(f"baseline {kind!r} needs n_layers or signals")
    N = len(budgets)
    if kind == "last_k":
        return np.arange(n_layers)[None, :] >= (n_layers - budgets)[:, None]
    if kind == "random_k":
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5A]))
        return top_k_mask(rng.random((N, n_layers)), budgets)
    if signals is None:
        raise ConfigError(f"baseline {kind!r} needs a per-client signal matrix")
    return top_k_mask(signals, budgets)


def layer_magnitudes(model):
    """Mean absolute weight of each layer (biases excluded)."""
    return np.array([np.abs(layer.weight).mean() for layer in model.layers])


def relative_grad_norms(grads, model):
    """``||g_l|| / ||theta_l||`` per layer."""
    return np.array([
        np.linalg.norm(g) / max(np.linalg.norm(layer.params), 1e-12)
        for g, layer in zip(grads, model.layers)
    ])
