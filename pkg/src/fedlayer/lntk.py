"""Layerwise NTK Gram matrices and the client-specific layer importance score.

For layer ``l`` with output Jacobian ``J_l`` (sample-major rows), the layer
kernel is ``J_l @ J_l.T``; the full-model kernel is the sum over layers.
A client's importance score for layer ``l`` is that layer's principal
kernel eigenvalue divided by the sum of principal eigenvalues over layers.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .model import forward, layer_factors, layer_jacobians, output_gradient

log = logging.getLogger(__name__)

GRAM_MODES = ("auto", "full", "block_sum")
DEFAULT_CAP = 256


@dataclass(frozen=True, eq=False)
class GramMatrix:
    matrix: np.ndarray
    layer: int
    mode: str = "full"

    @property
    def dim(self):
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class LayerSpectrum:
    eigenvalues: np.ndarray  # descending; only the head for the power-iteration path
    vector: np.ndarray  # unit-norm principal eigenvector
    layer: int = -1
    method: str = "dense"
    iterations: int = 0

    @property
    def principal(self):
        return float(self.eigenvalues[0])


@dataclass(frozen=True, eq=False)
class ImportanceMatrix:
    scores: np.ndarray  # (N, L), rows sum to one
    eigenvalues: np.ndarray  # (N, L) raw principal eigenvalues
    client_ids: tuple = field(default=())

    @property
    def shape(self):
        return self.scores.shape

    def __array__(self, dtype=None, copy=None):
        return self.scores if dtype is None else self.scores.astype(dtype)


def resolve_mode(mode, k):
    if mode not in GRAM_MODES:
        raise ConfigError(f"gram mode must be one of {GRAM_MODES}, got {mode!r}")
    if mode == "auto":
        return "full" if k <= 4 else "block_sum"
    return mode


def _check_size(n, k, mode, cap):
    if mode == "full" and n * k > cap:
        dim = n * k
        raise ConfigError(
            f"layer kernel would be {dim}x{dim} (n={n}, k={k}) above the cap {cap}; "
            "reduce the probe size or use gram mode 'block_sum'"
        )
    if n > cap:
        raise ConfigError(f"probe size {n} above the kernel cap {cap}; reduce the probe size")


def _gram_from_factors(delta, a_in, l, mode):
    # for a dense layer J[(i,c), :] = [delta_ic (x) a_i, delta_ic], hence
    # K[(i,c),(j,d)] = (delta_ic . delta_jd) * (a_i . a_j + 1)
    n, k, _ = delta.shape
    inner = a_in @ a_in.T + 1.0
    if mode == "full":
        dd = np.einsum("icp,jdp->icjd", delta, delta)
        return GramMatrix((dd * inner[:, None, :, None]).reshape(n * k, n * k), l, mode)
    return GramMatrix(np.einsum("icp,jcp->ij", delta, delta) * inner, l, mode)


def lntk_gram(model, batch, l, mode="full", cap=DEFAULT_CAP):
    """Layer-``l`` kernel on the probe batch.

    ``mode='full'`` returns the ``(n*k, n*k)`` matrix ``J_l J_l^T``;
    ``mode='block_sum'`` returns the ``(n, n)`` sum of per-output kernels.
    """
    if not 0 <= l < model.depth:
        raise IndexError(f"layer index {l} out of range for depth {model.depth}")
    mode = resolve_mode(mode, model.output_dim)
    _check_size(np.shape(getattr(batch, "inputs", batch))[0], model.output_dim, mode, cap)
    delta, a_in = layer_factors(model, batch)[l]
    return _gram_from_factors(delta, a_in, l, mode)


def lntk_grams(model, batch, mode="full", cap=DEFAULT_CAP):
    """Kernels for every layer from one forward/backward sweep."""
    mode = resolve_mode(mode, model.output_dim)
    n = np.shape(getattr(batch, "inputs", batch))[0]
    _check_size(n, model.output_dim, mode, cap)
    return [_gram_from_factors(d, a, l, mode) for l, (d, a) in enumerate(layer_factors(model, batch))]


def power_iteration(matrix, tol=1e-8, max_iter=1000, seed=0):
    """Largest eigenpair of a symmetric PSD matrix.

    Stops once the residual ``||A v - lam v||`` drops below ``tol * lam``.
    Returns ``(lam, v, iterations, converged)``.
    """
    dim = matrix.shape[0]
    v = np.random.default_rng(seed).standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = matrix @ v
        lam = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v, it, True
        if np.linalg.norm(w - lam * v) <= tol * abs(lam):
            return lam, w / norm, it, True
        v = w / norm
    return lam, v, max_iter, False


def principal_eigen(gram, tol=1e-8, max_iter=1000, dense_threshold=64):
    """Principal eigenvalue and eigenvector of a layer kernel.

    Matrices up to ``dense_threshold`` use a full symmetric
    eigendecomposition; larger ones use power iteration and fall back to the
    dense solver when it fails to converge within ``max_iter`` steps.
    """
    layer = getattr(gram, "layer", -1)
    a = np.asarray(getattr(gram, "matrix", gram), dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"kernel must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("kernel has non-finite entries", {"layer": layer})
    if a.shape[0] > dense_threshold:
        lam, v, its, ok = power_iteration(a, tol=tol, max_iter=max_iter)
        if ok:
            return LayerSpectrum(np.array([lam]), v, layer, "power", its)
        log.info("power iteration did not converge for layer %s; using dense solver", layer)
    try:
        vals, vecs = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}", {"layer": layer}) from exc
    order = np.argsort(vals)[::-1]
    vec = vecs[:, order[0]]
    return LayerSpectrum(vals[order], vec / np.linalg.norm(vec), layer, "dense", 0)


def normalize_eigenvalues(lams, client_id=None):
    lams = np.clip(np.asarray(lams, dtype=float), 0.0, None)
    total = lams.sum()
    if not total > 0:
        log.warning("client %s has all-zero principal eigenvalues; using a uniform row", client_id)
        return np.full(len(lams), 1.0 / len(lams))
    return lams / total


def client_eigenvalues(model, batch, mode="auto", cap=DEFAULT_CAP):
    return np.array([principal_eigen(g).principal for g in lntk_grams(model, batch, mode, cap)])


def probe_rng(seed, round_index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(round_index), 0x17]))


def importance_scores(model, clients, probe_size=64, seed=0, round_index=0, mode="auto", cap=DEFAULT_CAP):
    """Importance matrix for ``clients`` on the current (global) model.

    Each client contributes a probe of ``probe_size`` training samples,
    drawn with a generator salted by ``(seed, round_index)``.
    """
    lams, rows = [], []
    for client in clients:
        batch = client.sample_batch(probe_size, probe_rng(seed, round_index))
        lam = client_eigenvalues(model, batch, mode, cap)
        lams.append(lam)
        rows.append(normalize_eigenvalues(lam, client.client_id))
    return ImportanceMatrix(np.array(rows), np.array(lams), tuple(c.client_id for c in clients))


def loss_reduction_estimate(model, batch, loss_kind="squared_error"):
    """First-order loss reduction of a gradient step, decomposed by layer.

    Returns ``(full, per_layer, rank1)`` where ``full = g^T (sum_l K_l) g``
    for the output-space loss gradient ``g``, ``per_layer`` holds the
    addends ``g^T K_l g`` and ``rank1`` keeps only each layer's principal
    eigenpair: ``sum_l lam_l (u_l^T g)^2``.
    """
    if loss_kind != "squared_error":
        raise ConfigError(f"loss reduction diagnostic requires squared_error, got {loss_kind!r}")
    out = forward(model, batch.inputs)
    g = output_gradient(out, batch.targets, loss_kind).ravel()
    jacs = layer_jacobians(model, batch)
    per_layer, rank1 = [], 0.0
    for jac in jacs:
        jg = jac.T @ g
        per_layer.append(float(jg @ jg))
        spec = principal_eigen(jac @ jac.T)
        rank1 += spec.principal * float(spec.vector @ g) ** 2
    jg_full = np.concatenate(jacs, axis=1).T @ g
    return float(jg_full @ jg_full), np.array(per_layer), float(rank1)


def export_importance_csv(importance, path):
    scores = np.asarray(importance.scores)
    ids = importance.client_ids or tuple(range(scores.shape[0]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id"] + [f"S_{l + 1}" for l in range(scores.shape[1])])
        for cid, row in zip(ids, scores):
            writer.writerow([cid] + [f"{v:.17g}" for v in row])
