"""Synthetic non-IID client data.

Clients share one Gaussian-mixture task (one mean per class) and differ in
label proportions, which are drawn per client from ``Dirichlet(gamma * 1_k)``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

MAX_DIRICHLET_RETRIES = 10


def one_hot(labels, k):
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


@dataclass(frozen=True, eq=False)
class ProbeBatch:
    inputs: np.ndarray
    targets: np.ndarray
    batch_id: object = None

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ConfigError(f"probe inputs must be a non-empty matrix, got {self.inputs.shape}")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ConfigError("inputs and targets disagree on batch size")

    @property
    def n(self):
        return self.inputs.shape[0]


@dataclass(frozen=True, eq=False)
class ClientDataset:
    client_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    eval_x: np.ndarray
    eval_y: np.ndarray
    n_classes: int
    dirichlet_gamma: float
    label_proportions: np.ndarray

    @property
    def d(self):
        return len(self.train_y)

    def train_batch(self, idx=None, batch_id=None):
        idx = slice(None) if idx is None else idx
        return ProbeBatch(self.train_x[idx], one_hot(self.train_y[idx], self.n_classes), batch_id)

    def eval_batch(self):
        return ProbeBatch(self.eval_x, one_hot(self.eval_y, self.n_classes))

    def sample_batch(self, n, rng, batch_id=None):
        """Draw ``n`` training samples, with replacement only when ``d < n``."""
        idx = rng.choice(self.d, size=n, replace=self.d < n)
        return self.train_batch(idx, batch_id)

    def label_histogram(self):
        return np.bincount(self.train_y, minlength=self.n_classes)


def sample_weights(clients):
    """Relative sample sizes ``d_i / sum_j d_j``."""
    d = np.array([c.d for c in clients], dtype=float)
    return d / d.sum()


def _allocate(total, proportions):
    # largest-remainder rounding keeps counts proportional and summing to total
    raw = total * proportions
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _draw_proportions(rng, gamma, k):
    for _ in range(MAX_DIRICHLET_RETRIES):
        p = rng.dirichlet(np.full(k, gamma))
        if np.all(np.isfinite(p)) and p.sum() > 0:
            return p / p.sum()
    raise ConfigError(
        f"Dirichlet(gamma={gamma}) draw degenerate after {MAX_DIRICHLET_RETRIES} retries"
    )


def generate_clients(
    N,
    dirichlet_gamma,
    samples_per_client,
    k,
    seed,
    input_dim=16,
    class_sep=1.5,
    noise=1.0,
    eval_fraction=0.2,
):
    """Generate ``N`` label-skewed clients over a shared Gaussian mixture.

    ``samples_per_client`` (one int or a per-client sequence) is the
    training count ``d_i``; each client additionally gets
    ``max(1, round(eval_fraction * d_i))`` held-out samples drawn from the
    same label proportions.
    """
    if N < 2:
        raise ConfigError(f"need at least 2 clients, got {N}")
    if dirichlet_gamma <= 0:
        raise ConfigError("dirichlet_gamma must be positive")
    if eval_fraction <= 0:
        raise ConfigError("eval_fraction must be positive")
    sizes = np.broadcast_to(np.asarray(samples_per_client, dtype=int), (N,))
    if sizes.min() < 1:
        raise ConfigError("every client needs at least one training sample")
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=class_sep, size=(k, input_dim))
    clients = []
    for i, total in enumerate(sizes):
        p = _draw_proportions(rng, dirichlet_gamma, k)
        n_eval = max(1, int(round(eval_fraction * total)))
        parts = []
        for part_size in (total, n_eval):
            labels = np.repeat(np.arange(k), _allocate(part_size, p))
            rng.shuffle(labels)
            x = means[labels] + noise * rng.normal(size=(len(labels), input_dim))
            parts.append((x, labels))
        (tx, ty), (ex, ey) = parts
        clients.append(ClientDataset(i, tx, ty, ex, ey, k, float(dirichlet_gamma), p))
    return clients


def pooled_eval(clients):
    x = np.concatenate([c.eval_x for c in clients])
    y = np.concatenate([c.eval_y for c in clients])
    return ProbeBatch(x, one_hot(y, clients[0].n_classes))


def pooled_train(clients):
    x = np.concatenate([c.train_x for c in clients])
    y = np.concatenate([c.train_y for c in clients])
    return ProbeBatch(x, one_hot(y, clients[0].n_classes))


def export_clients_csv(clients, path):
    """Write one row per sample: client_id, partition, features..., label."""
    dim = clients[0].train_x.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "partition"] + [f"x{j}" for j in range(dim)] + ["label"])
        for c in clients:
            for name, xs, ys in (("train", c.train_x, c.train_y), ("eval", c.eval_x, c.eval_y)):
                for x, y in zip(xs, ys):
                    writer.writerow([c.client_id, name] + [repr(float(v)) for v in x] + [int(y)])
