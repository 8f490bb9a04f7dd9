"""The five population/trajectory searches behind :func:`solve`.

All of them share :class:`Problem`: the importance matrix, budgets, a
Pareto archive that every evaluated mask is offered to, and a scalar
score ``importance/I0 - w * variance/V0`` (``I0``/``V0`` are the
objectives of the per-client greedy mask) used wherever a single
comparison is needed. Each individual owns a random stream derived from
the solver seed and its index, so results do not depend on the order in
which individuals are processed.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .core import (
    ParetoArchive,
    evaluate_batch,
    greedy_mask,
    rank_and_crowding,
    repair,
    top_k_mask,
)


class Problem:
    def __init__(self, S, budgets, config, init_masks=(), trace=None):
        self.S = np.asarray(S, dtype=float)
        self.N, self.L = self.S.shape
        self.budgets = np.asarray(budgets, dtype=int)
        self.config = config
        self.archive = ParetoArchive(config.archive_capacity, config.use_variance)
        self.greedy = greedy_mask(self.S, self.budgets)
        gi, gv = evaluate_batch(self.greedy[None], self.S)
        self.imp_scale = float(gi[0]) if gi[0] > 0 else 1.0
        self.var_scale = float(gv[0]) if gv[0] > 1e-12 else max(self.N * self.N / 4.0, 1e-12)
        self.weight = config.variance_weight if config.use_variance else 0.0
        self.seeded = [self.greedy] + [
            repair(np.asarray(m, dtype=bool), self.S, self.budgets) for m in init_masks
        ]
        self.trace = trace
        self.evaluations = 0
        self._log_weights = np.log(self.S + 1e-12)

    def streams(self, count, tag):
        base = int(self.config.seed)
        return [
            np.random.default_rng(np.random.SeedSequence(base, spawn_key=(tag, j)))
            for j in range(count)
        ]

    def score(self, imp, var):
        return imp / self.imp_scale - self.weight * var / self.var_scale

    def evaluate(self, masks):
        masks = np.asarray(masks, dtype=bool)
        imp, var = evaluate_batch(masks, self.S)
        entered = self.archive.add_many(masks, imp, var)
        self.entered = masks[entered]
        self.evaluations += len(masks)
        return imp, var

    def sample_mask(self, rng):
        """Importance-proportional sampling of each client's full budget.

        Gumbel-perturbed log-weights followed by top-b is equivalent to
        sequential weighted sampling without replacement.
        """
        keys = self._log_weights + rng.gumbel(size=self.S.shape)
        return top_k_mask(keys, self.budgets)

    def initial_population(self, rngs):
        pop = [m.copy() for m in self.seeded[: len(rngs)]]
        for rng in rngs[len(pop):]:
            pop.append(self.sample_mask(rng))
        return np.array(pop)

    def log_iteration(self, iteration):
        if self.trace is None:
            return
        knee = self.archive.knee()
        self.trace.append(
            {
                "iteration": iteration,
                "archive": [[float(a), float(b)] for a, b in self.archive.points],
                "chosen": self.archive.masks[knee].astype(int).tolist(),
            }
        )


def _pick(weights, u):
    """Inverse-CDF draw of one column per row; ``ok`` is False for all-zero rows."""
    c = np.cumsum(weights, axis=1)
    total = c[:, -1]
    idx = (c <= (u * total)[:, None]).sum(axis=1)
    return np.minimum(idx, weights.shape[1] - 1), total > 0


def swap_moves(problem, masks, u, add_weights=None):
    """Swap one selected layer for an unselected one in a random row of each mask.

    ``u`` holds four uniforms per mask (row, incoming layer, grow-or-swap,
    outgoing layer). Rows below budget grow by one layer instead, half of
    the time. The incoming layer is drawn proportionally to
    ``add_weights`` (``(P, N, L)``) when given, otherwise uniformly.
    """
    masks = np.asarray(masks, dtype=bool)
    P = len(masks)
    ar = np.arange(P)
    counts = masks.sum(axis=2)
    i, ok = _pick(((counts > 0) & (counts < problem.L)).astype(float), u[:, 0])
    rows = masks[ar, i]
    w_add = (~rows).astype(float)
    if add_weights is not None:
        w_add *= add_weights[ar, i]
    add, _ = _pick(w_add, u[:, 1])
    drop, _ = _pick(rows.astype(float), u[:, 3])
    grow = (counts[ar, i] < problem.budgets[i]) & (u[:, 2] < 0.5)
    out = masks.copy()
    sw = ok & ~grow
    out[ar[sw], i[sw], drop[sw]] = False
    out[ar[ok], i[ok], add[ok]] = True
    return out


def exchange_moves(problem, masks, u):
    """Trade one layer between two clients of each mask; counts are unchanged."""
    masks = np.asarray(masks, dtype=bool)
    P, N = masks.shape[:2]
    ar = np.arange(P)
    if N < 2:
        return masks.copy()
    i = np.minimum((u[:, 0] * N).astype(int), N - 1)
    j = (i + 1 + np.minimum((u[:, 1] * (N - 1)).astype(int), N - 2)) % N
    give = masks[ar, i] & ~masks[ar, j]
    take = masks[ar, j] & ~masks[ar, i]
    a, ok_a = _pick(give.astype(float), u[:, 2])
    b, ok_b = _pick(take.astype(float), u[:, 3])
    ok = ok_a & ok_b
    out = masks.copy()
    ar, i, j, a, b = ar[ok], i[ok], j[ok], a[ok], b[ok]
    out[ar, i, a] = False
    out[ar, i, b] = True
    out[ar, j, b] = False
    out[ar, j, a] = True
    return out


def count_optimal(S, mask):
    """Highest-importance mask with the same row budgets and layer counts.

    Fixing the counts fixes the variance objective, and what remains is a
    transportation problem with unit capacities. Its constraint matrix is
    totally unimodular, so the simplex vertex is already a 0/1 mask.
    """
    N, L = S.shape
    rows = np.kron(np.eye(N), np.ones(L))
    cols = np.tile(np.eye(L), N)
    rhs = np.concatenate([mask.sum(axis=1), mask.sum(axis=0)])
    res = linprog(-S.ravel(), A_eq=np.vstack([rows, cols]), b_eq=rhs, bounds=(0, 1), method="highs-ds")
    if res.status != 0:
        return mask.copy()
    return res.x.reshape(N, L) > 0.5


def _tournament(rng, ranks, crowd):
    a, b = rng.integers(len(ranks), size=2)
    if ranks[a] != ranks[b]:
        return a if ranks[a] < ranks[b] else b
    return a if crowd[a] >= crowd[b] else b


def _survivors(masks, imp, var, size):
    flat = masks.reshape(len(masks), -1)
    _, first = np.unique(flat, axis=0, return_index=True)
    first = np.sort(first)
    pts = np.column_stack([imp[first], var[first]])
    ranks, crowd = rank_and_crowding(pts)
    order = np.lexsort((-crowd, ranks))
    chosen = first[order[:size]]
    if len(chosen) < size:
        chosen = np.resize(chosen, size)
    return chosen


def _polish(problem, masks):
    """Offer the count-preserving optimum of each freshly archived mask."""
    if len(masks):
        problem.evaluate(np.array([count_optimal(problem.S, m) for m in masks]))


def run_nsga(problem):
    cfg = problem.config
    P = cfg.population
    rngs = problem.streams(P, 1)
    mut = cfg.mutation_rate if cfg.mutation_rate is not None else 1.0 / problem.L
    pop = problem.initial_population(rngs)
    imp, var = problem.evaluate(pop)
    problem.log_iteration(0)
    for it in range(1, cfg.iterations + 1):
        pts = np.column_stack([imp, var])
        if not cfg.use_variance:
            pts[:, 1] = 0.0
        ranks, crowd = rank_and_crowding(pts)
        children = np.empty_like(pop)
        for j, rng in enumerate(rngs):
            a = _tournament(rng, ranks, crowd)
            b = _tournament(rng, ranks, crowd)
            child = pop[a].copy()
            if rng.random() < cfg.crossover_rate:
                rows = rng.random(problem.N) < 0.5
                child[rows] = pop[b][rows]
            child ^= rng.random(child.shape) < mut
            children[j] = child
        children = repair(children, problem.S, problem.budgets)
        cimp, cvar = problem.evaluate(children)
        union = np.concatenate([pop, children])
        uimp = np.concatenate([imp, cimp])
        uvar = np.concatenate([var, cvar]) if cfg.use_variance else np.zeros(2 * P)
        keep = _survivors(union, uimp, uvar, P)
        pop = union[keep]
        imp = uimp[keep]
        var = np.concatenate([var, cvar])[keep]
        problem.log_iteration(it)


def run_abc(problem):
    cfg = problem.config
    SN = cfg.population
    rngs = problem.streams(SN, 2)
    onlooker_rngs = problem.streams(SN, 3)
    scout_rngs = problem.streams(SN, 4)
    foods = problem.initial_population(rngs)
    imp, var = problem.evaluate(foods)
    trials = np.zeros(SN, dtype=int)
    problem.log_iteration(0)

    def diversity_weights(masks):
        # favour important layers that few other clients use
        others = masks.sum(axis=1, keepdims=True) - masks
        return (problem.S + 1e-12)[None] / (1.0 + others)

    def visit(sources, streams):
        sources = np.asarray(sources)
        u = np.array([rng.random(5) for rng in streams])
        cands = swap_moves(problem, foods[sources], u, diversity_weights(foods[sources]))
        cimp, cvar = problem.evaluate(cands)
        for k, i in enumerate(sources):
            better = problem.score(cimp[k], cvar[k]) >= problem.score(imp[i], var[i])
            if better or u[k, 4] < cfg.abc_worse_acceptance:
                foods[i], imp[i], var[i] = cands[k], cimp[k], cvar[k]
            trials[i] = 0 if better else trials[i] + 1

    for it in range(1, cfg.iterations + 1):
        visit(np.arange(SN), rngs)
        # onlooker probabilities from importance rank + diversity rank
        imp_rank = np.argsort(np.argsort(imp, kind="stable"), kind="stable") + 1
        var_rank = np.argsort(np.argsort(-var, kind="stable"), kind="stable") + 1
        fitness = imp_rank + (var_rank if cfg.use_variance else 0)
        probs = fitness / fitness.sum()
        visit([rng.choice(SN, p=probs) for rng in onlooker_rngs], onlooker_rngs)
        for i in np.flatnonzero(trials > cfg.abc_limit):
            foods[i] = problem.sample_mask(scout_rngs[i])
            ni, nv = problem.evaluate(foods[i][None])
            imp[i], var[i] = ni[0], nv[0]
            trials[i] = 0
        problem.log_iteration(it)


def run_aco(problem):
    """Pheromone-guided construction with bicriterion ants.

    Ant ``k`` of ``m`` builds client rows in index order, drawing each
    row's layers with probability proportional to
    ``tau^a * (S^(1-lam_k) * D^lam_k)^b`` where ``D = 1 / (1 + n_l)``
    counts the clients already placed on layer ``l`` by this ant and
    ``lam_k = k / (m - 1)`` spreads the colony across the trade-off.
    """
    cfg = problem.config
    P = cfg.population
    rngs = problem.streams(P, 5)
    tau = np.ones((problem.N, problem.L))
    tau_min, tau_max = 1e-3, 1e3
    lam = np.linspace(0.0, 1.0, P) if cfg.use_variance else np.zeros(P)
    log_s = np.log(problem.S + 1e-12)
    problem.evaluate(np.array(problem.seeded))
    problem.log_iteration(0)
    for it in range(1, cfg.iterations + 1):
        noise = np.array([rng.gumbel(size=tau.shape) for rng in rngs])
        ants = np.zeros((P, problem.N, problem.L), dtype=bool)
        placed = np.zeros((P, problem.L))
        for i in range(problem.N):
            log_d = -np.log1p(placed)
            keys = (
                cfg.pheromone_alpha * np.log(tau[i])[None, :]
                + cfg.heuristic_beta * ((1.0 - lam)[:, None] * log_s[i][None, :] + lam[:, None] * log_d)
                + noise[:, i]
            )
            ants[:, i] = top_k_mask(keys, np.full(P, problem.budgets[i]))
            placed += ants[:, i]
        problem.evaluate(ants)
        # daemon action: polish this iteration's new archive members
        _polish(problem, problem.entered)
        tau *= 1.0 - cfg.evaporation
        elite = np.array(problem.archive.masks, dtype=float)
        tau += elite.sum(axis=0) / len(elite)
        np.clip(tau, tau_min, tau_max, out=tau)
        problem.log_iteration(it)


def run_sa(problem):
    """Annealed single chain whose scalarization weight is redrawn per level.

    Each temperature level scores moves with ``imp/I0 - w * var/V0`` for a
    fresh ``w`` in ``[0, 2 * variance_weight]``, so the chain sweeps the
    whole trade-off instead of settling on one point of it.
    """
    cfg = problem.config
    rng = problem.streams(1, 6)[0]
    state = problem.sample_mask(rng)
    si, sv = problem.evaluate(state[None])
    si, sv = si[0], sv[0]
    problem.evaluate(np.array(problem.seeded))
    temperature = cfg.initial_temperature
    problem.log_iteration(0)
    for it in range(1, cfg.iterations + 1):
        if rng.random() < cfg.sa_restart_probability:
            # archive-guided restart, the chain resumes from a stored trade-off
            masks = problem.archive.masks
            state = masks[rng.integers(len(masks))].copy()
            ri, rv = evaluate_batch(state[None], problem.S)
            si, sv = ri[0], rv[0]
        w = 2.0 * problem.weight * rng.random()

        def energy(imp, var):
            return -(imp / problem.imp_scale - w * var / problem.var_scale)

        current = energy(si, sv)
        # one Markov chain of `population` moves per temperature level
        draws = rng.random((cfg.population, 6))
        fresh = []
        for u in draws:
            if u[4] < 0.5:
                cand = swap_moves(problem, state[None], u[None, :4])
            else:
                cand = exchange_moves(problem, state[None], u[None, :4])
            ci, cv = problem.evaluate(cand)
            fresh.extend(problem.entered)
            cand_energy = energy(ci[0], cv[0])
            delta = cand_energy - current
            if delta <= 0 or u[5] < np.exp(-delta / temperature):
                state, current, si, sv = cand[0], cand_energy, ci[0], cv[0]
        _polish(problem, fresh)
        temperature *= cfg.cooling
        problem.log_iteration(it)


def _guide(rng, archive_masks, crowd):
    a, b = rng.integers(len(archive_masks), size=2)
    return archive_masks[a if crowd[a] >= crowd[b] else b]


def run_mopso(problem):
    cfg = problem.config
    P = cfg.population
    rngs = problem.streams(P, 7)
    init = problem.initial_population(rngs).astype(float)
    rel = problem.S / problem.S.max(axis=1, keepdims=True)
    pos = np.array([
        0.5 * m + 0.5 * rng.random(m.shape) * rel for m, rng in zip(init, rngs)
    ])
    pos[: len(problem.seeded)] = init[: len(problem.seeded)]
    vel = np.zeros_like(pos)
    masks = top_k_mask(pos, problem.budgets)
    imp, var = problem.evaluate(masks)
    _polish(problem, problem.entered)
    best_pos, best_imp, best_var = pos.copy(), imp.copy(), var.copy()
    problem.log_iteration(0)
    for it in range(1, cfg.iterations + 1):
        guides = np.array(problem.archive.masks, dtype=float)
        crowd = problem.archive.crowding()
        coins = np.empty(P)
        for j, rng in enumerate(rngs):
            g = _guide(rng, guides, crowd)
            r1 = rng.random(pos[j].shape)
            r2 = rng.random(pos[j].shape)
            vel[j] = (
                cfg.inertia * vel[j]
                + cfg.cognitive * r1 * (best_pos[j] - pos[j])
                + cfg.social * r2 * (g - pos[j])
            )
            coins[j] = rng.random()
        np.clip(vel, -cfg.max_velocity, cfg.max_velocity, out=vel)
        pos = np.clip(pos + vel, 0.0, 1.0)
        # turbulence on a shrinking share of particles: re-draw one client
        # row, trade the position values of a layer pair between two clients
        # (the continuous analogue of a counts-preserving exchange), or move
        # one client off its most crowded layer onto the least used one
        p_mut = max(0.1, (1.0 - (it - 1) / cfg.iterations) ** 1.5)
        u = np.array([rng.random(6) for rng in rngs])
        hit = np.flatnonzero(u[:, 4] < p_mut)
        if len(hit):
            current = top_k_mask(pos[hit], problem.budgets)
            traded = exchange_moves(problem, current, u[hit, :4])
            for k, j in enumerate(hit):
                i = min(int(u[j, 0] * problem.N), problem.N - 1)
                if u[j, 5] < 1 / 3:
                    pos[j, i] = rngs[j].random(problem.L) * rel[i]
                    continue
                if u[j, 5] < 2 / 3:
                    row, n = current[k, i], current[k].sum(axis=0)
                    if row.any() and not row.all():
                        a = np.flatnonzero(row)[np.argmax(n[row])]
                        b = np.flatnonzero(~row)[np.argmin(n[~row])]
                        pos[j, i, [a, b]] = pos[j, i, [b, a]]
                    continue
                moved = np.argwhere(traded[k] != current[k])
                for i in np.unique(moved[:, 0]):
                    cols = moved[moved[:, 0] == i, 1]
                    pos[j, i, cols] = pos[j, i, cols[::-1]]
        masks = top_k_mask(pos, problem.budgets)
        imp, var = problem.evaluate(masks)
        _polish(problem, problem.entered)
        if cfg.use_variance:
            new_dom = (imp >= best_imp) & (var <= best_var) & ((imp > best_imp) | (var < best_var))
            old_dom = (best_imp >= imp) & (best_var <= var) & ((best_imp > imp) | (best_var < var))
            replace = new_dom | (~old_dom & (coins < 0.5))
        else:
            replace = imp >= best_imp
        best_pos[replace] = pos[replace]
        best_imp[replace] = imp[replace]
        best_var[replace] = var[replace]
        problem.log_iteration(it)


RUNNERS = {
    "nsga": run_nsga,
    "abc": run_abc,
    "aco": run_aco,
    "sa": run_sa,
    "mopso": run_mopso,
}
