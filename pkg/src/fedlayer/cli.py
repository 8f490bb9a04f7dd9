"""Command line entry point: ``fedlayer {run,compare,report,oracle}``.

Any config key can be overridden with a dotted flag, e.g.
``--federation.rounds 3`` or ``--selector.population=20``. ``--seed`` and
``--selector`` are shorthands for ``seeds=[s]`` and ``selector.algorithm``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure. Errors
are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigError, NumericalError
from .experiment import load_experiment, schema_keys
from .fedsim import run_federation
from .metrics import budget_scaled_hypervolume, hypervolume_ratio, rounds_to_target
from .report import emit_reports, line_chart, read_csv, render_plots, write_csv
from .selector import BASELINES, META_HEURISTICS, SolverConfig, clamp_budgets, solve
from .selector.oracle import enumerate_masks, random_instance, true_front

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
TARGET_FRACTION = 0.5


def _fmt(v):
    return f"{float(v):.17g}"


def _parse_overrides(extra):
    """Turn leftover ``--a.b value`` / ``--a.b=value`` tokens into pairs."""
    pairs, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"flag {tok} needs a value")
            value = extra[i + 1]
            i += 2
        if key not in schema_keys():
            raise ConfigError(f"unknown flag --{key}")
        pairs.append((key, value))
    return pairs


def _experiment(args, extra):
    overrides = _parse_overrides(extra)
    if getattr(args, "seed", None) is not None:
        overrides.append(("seeds", [args.seed]))
    if getattr(args, "selector", None):
        overrides.append(("selector.algorithm", args.selector))
    if getattr(args, "out", None):
        overrides.append(("output_dir", args.out))
    return load_experiment(args.config, overrides)


def _write_echo(exp, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(exp.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_one(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    res = run_federation(cfg, checkpoint_dir=out_dir)
    emit_reports(res.records, out_dir, archives=res.archives, n_layers=cfg.depth)
    return res


def _summary(res):
    losses = res.train_losses
    return {
        "initial_train_loss": res.initial_train_loss,
        "final_train_loss": float(losses[-1]),
        "final_eval_accuracy": res.records[-1].eval_accuracy,
        "rounds_to_target": rounds_to_target(losses, TARGET_FRACTION * res.initial_train_loss),
        "mean_variance": float(np.mean([r.variance_obj for r in res.records])),
    }


def cmd_run(args, extra):
    exp = _experiment(args, extra)
    _write_echo(exp, exp.output_dir)
    for seed in exp.seeds:
        cfg = exp.federation_for(seed)
        res = _run_one(cfg, os.path.join(exp.output_dir, f"seed_{seed}"))
        print(json.dumps({"seed": seed, **_summary(res)}, sort_keys=True))
    return 0


def _run_hypervolume(res, cfg):
    budgets = clamp_budgets(cfg.resolved_budgets(), cfg.depth)
    values = []
    for rec, entries in zip(res.records, res.archives):
        if entries:
            pts = [(e["importance"], e["variance"]) for e in entries]
        else:
            pts = [(rec.importance_obj, rec.variance_obj)]
        values.append(budget_scaled_hypervolume(pts, rec.importance, budgets[rec.participants]))
    return float(np.mean(values))


def cmd_compare(args, extra):
    exp = _experiment(args, extra)
    selectors = [s for s in (args.selectors or "").split(",") if s] or list(exp.selectors) or list(META_HEURISTICS)
    if args.baselines or exp.baselines:
        selectors += [b for b in BASELINES if b not in selectors]
    for s in selectors:
        SolverConfig(algorithm=s)  # validates the name
    exp.selectors = selectors
    root = exp.output_dir
    _write_echo(exp, root)

    labels, seen = [], {}
    for s in selectors:
        seen[s] = seen.get(s, 0) + 1
        labels.append(s if seen[s] == 1 else f"{s}#{seen[s]}")
    curves, table = {}, []
    for label, sel in zip(labels, selectors):
        per_seed, hv, rtt, final, var = [], [], [], [], []
        for seed in exp.seeds:
            cfg = exp.federation_for(seed, sel)
            res = _run_one(cfg, os.path.join(root, "compare", label.replace("#", "_"), f"seed_{seed}"))
            summ = _summary(res)
            per_seed.append(res.train_losses)
            hv.append(_run_hypervolume(res, cfg))
            rtt.append(summ["rounds_to_target"])
            final.append(summ["final_train_loss"])
            var.append(summ["mean_variance"])
        curves[label] = np.median(np.array(per_seed), axis=0)
        table.append([label, _fmt(np.mean(hv)), _fmt(np.median(rtt)), _fmt(np.median(final)), _fmt(np.median(var))])
        print(json.dumps({"selector": label, "hypervolume": float(np.mean(hv)), "rounds_to_target": float(np.median(rtt))}))

    rounds = exp.federation.rounds
    rows = [[str(t + 1)] + [_fmt(curves[l][t]) for l in labels] for t in range(rounds)]
    write_csv(os.path.join(root, "convergence.csv"), ["round"] + labels, rows)
    write_csv(
        os.path.join(root, "hypervolume.csv"),
        ["selector", "hypervolume", "rounds_to_target", "final_train_loss", "mean_variance"],
        table,
    )
    _render_convergence(root)
    return 0


def _render_convergence(root):
    header, rows = read_csv(os.path.join(root, "convergence.csv"))
    x = [int(r[0]) for r in rows]
    series = {name: (x, [float(r[j + 1]) for r in rows]) for j, name in enumerate(header[1:])}
    os.makedirs(os.path.join(root, "plots"), exist_ok=True)
    with open(os.path.join(root, "plots", "convergence.svg"), "w") as fh:
        fh.write(line_chart(series, "Median training objective per round"))


def cmd_report(args, extra):
    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    if not os.path.isdir(args.directory):
        raise ConfigError(f"{args.directory} is not a directory")
    done = 0
    for dirpath, _, files in sorted(os.walk(args.directory)):
        if "records.csv" in files:
            render_plots(dirpath)
            done += 1
        if "convergence.csv" in files:
            _render_convergence(dirpath)
            done += 1
    if not done:
        raise ConfigError(f"no records.csv or convergence.csv under {args.directory}")
    print(json.dumps({"rendered": done}))
    return 0


def cmd_oracle(args, extra):
    if extra:
        raise ConfigError(f"unexpected arguments {extra}")
    algorithms = [a for a in (args.algorithms or "").split(",") if a]
    if algorithms == ["all"]:
        algorithms = list(META_HEURISTICS)
    for a in algorithms:
        if a not in META_HEURISTICS:
            raise ConfigError(f"{a!r} is not a meta-heuristic; expected one of {META_HEURISTICS}")
    budgets = [args.budget] * args.clients
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for i in range(args.instances):
            S = random_instance(args.clients, args.layers, args.seed + i)
            points, _ = true_front(S, budgets)
            line = {
                "instance": i,
                "n_masks": len(enumerate_masks(args.layers, budgets)),
                "front": [[float(a), float(b)] for a, b in points],
            }
            if algorithms:
                line["hv_ratio"] = {}
                for a in algorithms:
                    cfg = SolverConfig(algorithm=a, population=args.population, iterations=args.iterations, seed=i)
                    archive, _ = solve(S, budgets, cfg)
                    line["hv_ratio"][a] = hypervolume_ratio(archive.points, points)
            out.write(json.dumps(line, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fedlayer",
        allow_abbrev=False,
        description="Simulate federated selective-layer fine-tuning.",
        epilog="Dotted overrides: " + ", ".join(f"--{k}" for k in schema_keys()),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="run a single seed")
        p.add_argument("--selector", help="selector algorithm or baseline")
        p.add_argument("--out", help="output directory")

    run = sub.add_parser("run", allow_abbrev=False, help="run every configured seed")
    with_config(run)
    cmp_ = sub.add_parser("compare", allow_abbrev=False, help="run several selectors under identical seeds")
    with_config(cmp_)
    cmp_.add_argument("--selectors", help="comma-separated list, defaults to the five meta-heuristics")
    cmp_.add_argument("--baselines", action="store_true", help="append the baseline selectors")
    rep = sub.add_parser("report", allow_abbrev=False, help="re-render plots from existing CSVs")
    rep.add_argument("directory")
    orc = sub.add_parser("oracle", allow_abbrev=False, help="brute-force Pareto fronts of random instances")
    orc.add_argument("--clients", type=int, default=3)
    orc.add_argument("--layers", type=int, default=6)
    orc.add_argument("--budget", type=int, default=2)
    orc.add_argument("--instances", type=int, default=5)
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--algorithms", help="comma-separated meta-heuristics or 'all'")
    orc.add_argument("--population", type=int, default=40)
    orc.add_argument("--iterations", type=int, default=100)
    orc.add_argument("--out", help="write JSON lines here instead of stdout")
    return parser


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "report": cmd_report, "oracle": cmd_oracle}


def _fail(code, kind, exc):
    payload = {"error": kind, "message": str(exc)}
    diag = getattr(exc, "diagnostic", None)
    if diag:
        payload["diagnostic"] = diag
    sys.stderr.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
    return code


def _split_dotted(argv):
    """Separate ``--section.key [value]`` tokens from the argparse-handled ones."""
    plain, dotted, i = [], [], 0
    while i < len(argv):
        tok = argv[i]
        key = tok[2:].split("=", 1)[0]
        if tok.startswith("--") and ("." in key or key in ("output_dir", "seeds")):
            dotted.append(tok)
            if "=" not in tok and i + 1 < len(argv):
                dotted.append(argv[i + 1])
                i += 1
        else:
            plain.append(tok)
        i += 1
    return plain, dotted


def main(argv=None):
    parser = build_parser()
    plain, dotted = _split_dotted(list(sys.argv[1:] if argv is None else argv))
    try:
        args, extra = parser.parse_known_args(plain)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    extra = extra + dotted
    try:
        return COMMANDS[args.command](args, extra)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc)
    except OSError as exc:
        return _fail(EXIT_CONFIG, "io", exc)


if __name__ == "__main__":
    sys.exit(main())
