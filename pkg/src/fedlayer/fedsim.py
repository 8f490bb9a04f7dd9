"""Selective-layer federated training rounds.

Each round the server samples clients, scores layers on the current global
model, assigns per-client layer masks, lets every client run masked local
SGD and folds the weighted accumulated updates back into the global model.
"""

from __future__ import annotations

import json
import logging
import struct
import time
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import generate_clients, pooled_eval, sample_weights
from .errors import ConfigError, NumericalError
from .lntk import GRAM_MODES, importance_scores
from .model import Layer, LayeredModel, build_model, forward, loss_and_layer_grads, loss_value
from .selector import (
    META_HEURISTICS,
    SolverConfig,
    baseline_select,
    clamp_budgets,
    evaluate,
    is_feasible,
    layer_magnitudes,
    relative_grad_norms,
    solve,
)

log = logging.getLogger(__name__)

AGGREGATION_MODES = ("sum", "renormalize")

# device-heterogeneity pattern of the 4-client label-shift task: one client
# trains 6 layers, one trains 4, the remaining two train 2
TASK4_PATTERN = (6, 4, 2, 2)


def budget_pattern(name, n_clients, n_layers=12):
    """Per-client budgets from a named pattern.

    ``"task4"`` tiles (6, 4, 2, 2) over the clients for a 12-layer model and
    rescales it by ``n_layers / 12`` (at least one layer) for other depths.
    ``"uniform:b"`` gives every client ``b`` layers and ``"full"`` gives
    every client all layers.
    """
    if name == "task4":
        tiled = [TASK4_PATTERN[i % len(TASK4_PATTERN)] for i in range(n_clients)]
        return [max(1, int(round(b * n_layers / 12))) for b in tiled]
    if name == "full":
        return [n_layers] * n_clients
    if name.startswith("uniform:"):
        return [int(name.split(":", 1)[1])] * n_clients
    raise ConfigError(f"unknown budget pattern {name!r}")


@dataclass
class FederationConfig:
    n_clients: int = 8
    rounds: int = 30
    local_steps: int = 5
    batch_size: int = 32
    lr: float = 0.05
    client_fraction: float = 1.0
    budgets: list | None = None
    budget_pattern: str = "task4"
    probe_size: int = 64
    gram_mode: str = "auto"
    gram_cap: int = 256
    importance_every: int = 1
    aggregation: str = "sum"
    loss: str = "cross_entropy"
    seed: int = 0
    checkpoint_every: int = 0
    # model
    depth: int = 12
    width: int = 32
    activation: str = "tanh"
    # data
    input_dim: int = 16
    n_classes: int = 10
    dirichlet_gamma: float = 0.5
    samples_per_client: int = 200
    class_sep: float = 1.5
    noise: float = 1.0
    eval_fraction: float = 0.25
    selector: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if isinstance(self.selector, dict):
            self.selector = SolverConfig.from_dict(self.selector)
        self.validate()

    def validate(self):
        if self.rounds < 1 or self.local_steps < 1:
            raise ConfigError("rounds and local_steps must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.n_clients < 1:
            raise ConfigError("need at least one client")
        if not 0 < self.client_fraction <= 1:
            raise ConfigError("client_fraction must lie in (0, 1]")
        if self.aggregation not in AGGREGATION_MODES:
            raise ConfigError(f"aggregation must be one of {AGGREGATION_MODES}")
        if self.gram_mode not in GRAM_MODES:
            raise ConfigError(f"gram_mode must be one of {GRAM_MODES}")
        if self.importance_every < 1 or self.batch_size < 1 or self.probe_size < 1:
            raise ConfigError("importance_every, batch_size and probe_size must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        budgets = self.resolved_budgets()
        if len(budgets) != self.n_clients:
            raise ConfigError(f"need {self.n_clients} budgets, got {len(budgets)}")
        if min(budgets) < 1:
            raise ConfigError("budgets must be >= 1")

    def resolved_budgets(self):
        if self.budgets is not None:
            return [int(b) for b in self.budgets]
        return budget_pattern(self.budget_pattern, self.n_clients, self.depth)

    def to_dict(self):
        out = asdict(self)
        out["selector"] = self.selector.to_dict()
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown federation keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ClientUpdate:
    client_id: int
    deltas: list  # per-layer accumulated update, exactly zero for unselected layers
    alpha: float
    mask: np.ndarray
    train_loss: float
    grad_sums: list  # per-layer sum of the gradients actually applied


@dataclass
class RoundRecord:
    round: int
    client_ids: list
    client_loss: np.ndarray
    client_accuracy: np.ndarray
    train_loss: float
    eval_loss: float
    eval_accuracy: float
    importance_obj: float
    variance_obj: float
    counts: np.ndarray
    mask: np.ndarray
    importance: np.ndarray
    selector: str
    participants: list = field(default_factory=list)
    failed_clients: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self):
        return {
            "round": self.round,
            "client_ids": list(self.client_ids),
            "client_loss": [float(v) for v in self.client_loss],
            "client_accuracy": [float(v) for v in self.client_accuracy],
            "train_loss": self.train_loss,
            "eval_loss": self.eval_loss,
            "eval_accuracy": self.eval_accuracy,
            "importance_obj": self.importance_obj,
            "variance_obj": self.variance_obj,
            "counts": [int(c) for c in self.counts],
            "mask": self.mask.astype(int).tolist(),
            "selector": self.selector,
            "participants": list(self.participants),
            "failed_clients": list(self.failed_clients),
            "wall_time": self.wall_time,
        }


@dataclass
class FederationResult:
    records: list
    model: LayeredModel
    initial_train_loss: float
    initial_eval_loss: float
    archives: list = field(default_factory=list)  # per round: list of archive records
    config: FederationConfig | None = None

    @property
    def train_losses(self):
        return np.array([r.train_loss for r in self.records])


def _stream(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def _derived_seed(seed, *keys):
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def local_train_masked(model, client, mask_row, steps, lr, batch_size, seed, loss_kind="cross_entropy"):
    """Masked local SGD; only layers with ``mask_row[l]`` set are updated.

    The returned deltas are ``(theta_start - theta_end) / lr`` per layer.
    Raises :class:`NumericalError` when the loss or a gradient turns non-finite.
    """
    mask_row = np.asarray(mask_row, dtype=bool)
    if mask_row.shape != (model.depth,):
        raise ConfigError(f"mask row must have {model.depth} entries")
    rng = np.random.default_rng(seed)
    start = model.params()
    params = model.params()
    applied = [np.zeros_like(p) for p in params]
    current = model
    losses = []
    selected = np.flatnonzero(mask_row)
    for step in range(steps):
        batch = client.sample_batch(min(batch_size, client.d), rng, batch_id=step)
        with np.errstate(over="ignore", invalid="ignore"):
            value, grads = loss_and_layer_grads(current, batch, loss_kind)
        if not np.isfinite(value) or not all(np.all(np.isfinite(grads[l])) for l in selected):
            raise NumericalError(
                f"client {client.client_id}: non-finite loss at local step {step}",
                {"client_id": client.client_id, "step": step, "loss": float(value)},
            )
        losses.append(value)
        for l in selected:
            params[l] = params[l] - lr * grads[l]
            applied[l] += grads[l]
        current = model.with_params(params)
    deltas = [(s - p) / lr for s, p in zip(start, params)]
    return ClientUpdate(
        client.client_id, deltas, 1.0, mask_row.copy(), float(np.mean(losses)) if losses else 0.0, applied
    )


def aggregate(updates, mode="sum"):
    """Per-layer global update ``sum_i alpha_i * delta_i``.

    ``mode='renormalize'`` divides each layer by the total weight of the
    clients that selected it.
    """
    if not updates:
        raise ConfigError("aggregate needs at least one client update")
    if mode not in AGGREGATION_MODES:
        raise ConfigError(f"aggregation must be one of {AGGREGATION_MODES}")
    shapes = [d.shape for d in updates[0].deltas]
    total = [np.zeros(s) for s in shapes]
    weight = np.zeros(len(shapes))
    for up in updates:
        if [d.shape for d in up.deltas] != shapes:
            raise ConfigError(f"client {up.client_id} update has mismatched layer shapes")
        for l, d in enumerate(up.deltas):
            total[l] += up.alpha * d
        weight += up.alpha * np.asarray(up.mask, dtype=float)
    if mode == "renormalize":
        total = [t / w if w > 0 else t for t, w in zip(total, weight)]
    return total


def apply_update(model, delta, lr):
    return model.with_params([p - lr * d for p, d in zip(model.params(), delta)])


def _evaluate_model(model, clients, alpha, loss_kind):
    client_loss, client_acc = [], []
    for c in clients:
        tb = c.train_batch()
        client_loss.append(loss_value(forward(model, tb.inputs), tb.targets, loss_kind))
        eb = c.eval_batch()
        client_acc.append(float(np.mean(forward(model, eb.inputs).argmax(axis=1) == c.eval_y)))
    return np.array(client_loss), np.array(client_acc), float(np.dot(alpha, client_loss))


def _select_masks(config, model, clients, S, budgets, round_index, prev_archive):
    """Masks for the round's participants and the archive the solver produced."""
    sel = config.selector
    kind = sel.algorithm
    if kind in META_HEURISTICS:
        round_cfg = SolverConfig.from_dict({**sel.to_dict(), "seed": _derived_seed(config.seed, 7, round_index)})
        init = prev_archive if (sel.warm_start and prev_archive) else ()
        try:
            archive, chosen = solve(S, budgets, round_cfg, init_masks=init)
            if is_feasible(chosen, budgets):
                return chosen, archive, kind
            warnings.warn(f"round {round_index}: {kind} returned an infeasible mask; using lntk_only")
        except (ConfigError, NumericalError) as exc:
            warnings.warn(f"round {round_index}: {kind} failed ({exc}); using lntk_only")
        return baseline_select("lntk_only", budgets, S), None, "lntk_only"
    if kind == "lntk_only":
        return baseline_select(kind, budgets, S), None, kind
    if kind in ("last_k", "random_k"):
        seed = _derived_seed(config.seed, 8, round_index)
        return baseline_select(kind, budgets, seed=seed, n_layers=model.depth), None, kind
    if kind == "magnitude":
        return baseline_select(kind, budgets, layer_magnitudes(model)), None, kind
    rows = []
    for c in clients:
        batch = c.sample_batch(config.probe_size, _stream(config.seed, 9, round_index))
        _, grads = loss_and_layer_grads(model, batch, config.loss)
        rows.append(relative_grad_norms(grads, model))
    return baseline_select("grad_norm", budgets, np.array(rows)), None, kind


def _sample_participants(config, round_index):
    N = config.n_clients
    if config.client_fraction >= 1:
        return np.arange(N)
    m = max(1, int(round(config.client_fraction * N)))
    return np.sort(_stream(config.seed, 5, round_index).choice(N, size=m, replace=False))


def run_federation(config, checkpoint_dir=None, progress=None, clients=None):
    """Run ``config.rounds`` rounds; deterministic for a fixed config.

    ``clients`` replaces the synthetic data generator, e.g. for a single
    client reproducing centralized SGD.
    """
    if isinstance(config, dict):
        config = FederationConfig.from_dict(config)
    config.validate()
    if clients is not None:
        clients = list(clients)
        if len(clients) != config.n_clients:
            raise ConfigError(f"config expects {config.n_clients} clients, got {len(clients)}")
    else:
        clients = generate_clients(
            config.n_clients,
            config.dirichlet_gamma,
            config.samples_per_client,
            config.n_classes,
            _derived_seed(config.seed, 1),
            input_dim=config.input_dim,
            class_sep=config.class_sep,
            noise=config.noise,
            eval_fraction=config.eval_fraction,
        )
    model = build_model(
        config.depth, config.width, config.n_classes, _derived_seed(config.seed, 2),
        input_dim=config.input_dim, activation=config.activation,
    )
    all_budgets = clamp_budgets(config.resolved_budgets(), model.depth)
    alpha_all = sample_weights(clients)
    global_eval = pooled_eval(clients)
    _, _, initial_train = _evaluate_model(model, clients, alpha_all, config.loss)
    initial_eval = loss_value(forward(model, global_eval.inputs), global_eval.targets, config.loss)

    records, archives = [], []
    S_all = None
    prev_archive = None
    for t in range(1, config.rounds + 1):
        tic = time.perf_counter()
        part = _sample_participants(config, t)
        part_clients = [clients[i] for i in part]
        if S_all is None or (t - 1) % config.importance_every == 0:
            S_all = importance_scores(
                model, clients, config.probe_size, config.seed, t, config.gram_mode, config.gram_cap
            ).scores
        S = S_all[part]
        budgets = all_budgets[part]
        mask, archive, used = _select_masks(config, model, part_clients, S, budgets, t, prev_archive)
        archives.append(archive.to_records() if archive is not None else [])
        prev_archive = archive.masks if archive is not None else None

        alpha = alpha_all[part] / alpha_all[part].sum()
        updates, failed = [], []
        for row, (c, a) in enumerate(zip(part_clients, alpha)):
            try:
                up = local_train_masked(
                    model, c, mask[row], config.local_steps, config.lr, config.batch_size,
                    _derived_seed(config.seed, 3, t, c.client_id), config.loss,
                )
            except NumericalError as exc:
                log.warning("round %d: %s %s", t, exc, exc.diagnostic)
                failed.append(int(c.client_id))
                continue
            up.alpha = float(a)
            updates.append(up)
        if not updates:
            raise NumericalError(f"round {t}: every participating client diverged", {"round": t, "clients": failed})
        model = apply_update(model, aggregate(updates, config.aggregation), config.lr)

        c_loss, c_acc, train_loss = _evaluate_model(model, clients, alpha_all, config.loss)
        if not np.isfinite(train_loss):
            raise NumericalError(f"round {t}: global training loss is not finite", {"round": t})
        out = forward(model, global_eval.inputs)
        obj = evaluate(mask, S)
        rec = RoundRecord(
            round=t,
            client_ids=[int(c.client_id) for c in clients],
            client_loss=c_loss,
            client_accuracy=c_acc,
            train_loss=train_loss,
            eval_loss=loss_value(out, global_eval.targets, config.loss),
            eval_accuracy=float(np.mean(out.argmax(axis=1) == global_eval.targets.argmax(axis=1))),
            importance_obj=obj.importance,
            variance_obj=obj.variance,
            counts=mask.sum(axis=0),
            mask=mask.copy(),
            importance=S.copy(),
            selector=used,
            participants=[int(i) for i in part],
            failed_clients=failed,
            wall_time=time.perf_counter() - tic,
        )
        records.append(rec)
        if checkpoint_dir is not None and config.checkpoint_every and t % config.checkpoint_every == 0:
            save_checkpoint(model, f"{checkpoint_dir}/global_round{t:04d}.ckpt", t)
        if progress is not None:
            progress(rec)
    return FederationResult(records, model, initial_train, initial_eval, archives, config)


CKPT_MAGIC = b"FLAYCKPT"


def save_checkpoint(model, path, round_index=0):
    """Write a global-model checkpoint.

    Layout: 8-byte magic ``FLAYCKPT``, little-endian uint32 header length,
    UTF-8 JSON header (layer shapes and activations), then every layer's
    ``W`` (row-major) and ``b`` as little-endian float64, layer by layer.
    """
    header = {
        "version": 1,
        "dtype": "<f8",
        "round": int(round_index),
        "layers": [
            {
                "weight_shape": [l.fan_out, l.fan_in],
                "bias_shape": [l.fan_out],
                "activation": l.activation,
            }
            for l in model.layers
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(model.flat_params().astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise ConfigError(f"{path} is not a checkpoint file")
    (size,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + size].decode("utf-8"))
    flat = np.frombuffer(raw[12 + size :], dtype="<f8").astype(float)
    layers, offset = [], 0
    for entry in header["layers"]:
        fan_out, fan_in = entry["weight_shape"]
        n = (fan_in + 1) * fan_out
        layers.append(Layer(fan_in, fan_out, entry["activation"], flat[offset : offset + n].copy()))
        offset += n
    if offset != len(flat):
        raise ConfigError(f"{path}: payload has {len(flat)} values, header describes {offset}")
    return LayeredModel(layers), header
