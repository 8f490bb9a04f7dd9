"""Run artifacts: CSV tables, archive dumps and plain SVG plots.

Output directory layout::

    records.csv      one row per (round, client) plus a ``global`` row per round
    histogram.csv    per-round selection counts n_1..n_L and their variance
    importance.csv   per-round importance scores S_1..S_L per participating client
    archive.jsonl    one JSON object per round with the solver's Pareto archive
    plots/loss.svg, plots/histogram.svg, plots/rank_heatmap.svg

Plots are rendered from the CSV files only, so ``render_plots`` can rebuild
them for an existing directory. All numbers are written with fixed formats,
which keeps the files byte-stable for identical inputs.
"""

from __future__ import annotations

import csv
import json
import os
from html import escape

import numpy as np

from .errors import ConfigError
from .metrics import SelectionHistogram, rank_heatmap

W, H = 640, 400
PAD_L, PAD_R, PAD_T, PAD_B = 64, 150, 36, 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf")


def _fmt(v):
    return f"{float(v):.17g}"


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")


# ---------------------------------------------------------------- svg


def _svg(body, title):
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n'
        f'<rect width="{W}" height="{H}" fill="white"/>\n'
        f'<text x="{W // 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>\n'
    )
    return head + "".join(body) + "</svg>\n"


def _axes(xlabel, ylabel, xr, yr):
    x0, y0, x1, y1 = PAD_L, H - PAD_B, W - PAD_R, PAD_T
    out = [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>\n',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>\n',
        f'<text x="{(x0 + x1) // 2}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>\n',
        f'<text x="16" y="{(y0 + y1) // 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {(y0 + y1) // 2})">{escape(ylabel)}</text>\n',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = xr[0] + frac * (xr[1] - xr[0])
        yv = yr[0] + frac * (yr[1] - yr[0])
        px = x0 + frac * (x1 - x0)
        py = y0 - frac * (y0 - y1)
        out.append(f'<text x="{px:.2f}" y="{y0 + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{xv:.3g}</text>\n')
        out.append(f'<text x="{x0 - 6}" y="{py + 3:.2f}" text-anchor="end" font-family="sans-serif" font-size="10">{yv:.3g}</text>\n')
    return out


def _scale(v, lo, hi, a, b):
    if hi <= lo:
        return (a + b) / 2
    return a + (v - lo) / (hi - lo) * (b - a)


def line_chart(series, title, xlabel="round", ylabel="loss"):
    """``series`` maps a label to ``(x, y)`` arrays; empty input gives bare axes."""
    series = {k: (np.asarray(x, float), np.asarray(y, float)) for k, (x, y) in series.items()}
    xs = [x for x, _ in series.values() if x.size]
    ys = [y[np.isfinite(y)] for _, y in series.values() if y.size]
    ys = [y for y in ys if y.size]
    xr = (min(x.min() for x in xs), max(x.max() for x in xs)) if xs else (0.0, 1.0)
    yr = (min(y.min() for y in ys), max(y.max() for y in ys)) if ys else (0.0, 1.0)
    body = _axes(xlabel, ylabel, xr, yr)
    for idx, (label, (x, y)) in enumerate(series.items()):
        color = PALETTE[idx % len(PALETTE)]
        pts = " ".join(
            f"{_scale(a, *xr, PAD_L, W - PAD_R):.2f},{_scale(b, *yr, H - PAD_B, PAD_T):.2f}"
            for a, b in zip(x, y)
            if np.isfinite(b)
        )
        if pts:
            body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>\n')
        ly = PAD_T + 16 * idx + 8
        body.append(f'<line x1="{W - PAD_R + 10}" y1="{ly}" x2="{W - PAD_R + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>\n')
        body.append(f'<text x="{W - PAD_R + 34}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(str(label))}</text>\n')
    return _svg(body, title)


def bar_chart(values, title, xlabel="layer", ylabel="selections"):
    values = np.asarray(values, dtype=float)
    top = float(values.max()) if values.size and values.max() > 0 else 1.0
    body = _axes(xlabel, ylabel, (1, max(len(values), 1)), (0.0, top))
    if values.size:
        slot = (W - PAD_R - PAD_L) / len(values)
        for i, v in enumerate(values):
            h = v / top * (H - PAD_B - PAD_T)
            body.append(
                f'<rect x="{PAD_L + i * slot + 0.1 * slot:.2f}" y="{H - PAD_B - h:.2f}" '
                f'width="{0.8 * slot:.2f}" height="{h:.2f}" fill="{PALETTE[0]}"/>\n'
            )
    return _svg(body, title)


def heatmap(matrix, title, xlabel="layer", ylabel="round"):
    """Grey-scale cells; darker means a smaller value (rank 1 is darkest)."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    body = _axes(xlabel, ylabel, (1, max(matrix.shape[1], 1)), (1, max(matrix.shape[0], 1)))
    if matrix.size:
        lo, hi = matrix.min(), matrix.max()
        cw = (W - PAD_R - PAD_L) / matrix.shape[1]
        ch = (H - PAD_B - PAD_T) / matrix.shape[0]
        for r, row in enumerate(matrix):
            for c, v in enumerate(row):
                g = int(round(_scale(v, lo, hi, 20, 235)))
                body.append(
                    f'<rect x="{PAD_L + c * cw:.2f}" y="{H - PAD_B - (r + 1) * ch:.2f}" '
                    f'width="{cw:.2f}" height="{ch:.2f}" fill="rgb({g},{g},{g})"/>\n'
                )
    return _svg(body, title)


# ---------------------------------------------------------------- csv


def _layer_count(records):
    return len(records[0].counts) if records else 0


def records_rows(records, n_layers=None):
    L = _layer_count(records) if n_layers is None else n_layers
    header = ["round", "client_id", "loss", "accuracy", "importance_obj", "variance_obj"]
    header += [f"n_{l + 1}" for l in range(L)] + ["train_loss"]
    rows = []
    for r in records:
        tail = [_fmt(r.importance_obj), _fmt(r.variance_obj)] + [str(int(c)) for c in r.counts]
        for cid, loss, acc in zip(r.client_ids, r.client_loss, r.client_accuracy):
            rows.append([str(r.round), str(cid), _fmt(loss), _fmt(acc)] + tail + [_fmt(loss)])
        rows.append([str(r.round), "global", _fmt(r.eval_loss), _fmt(r.eval_accuracy)] + tail + [_fmt(r.train_loss)])
    return header, rows


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, [])
        return header, list(reader)


def emit_reports(records, out_dir, histogram=None, archives=None, n_layers=None):
    """Write CSVs, ``archive.jsonl`` and the SVG plots; returns the written paths."""
    _ensure_dir(out_dir)
    records = list(records)
    hist = histogram if histogram is not None else SelectionHistogram.from_records(records)
    L = n_layers if n_layers is not None else (hist.counts.shape[1] if hist.counts.size else _layer_count(records))
    paths = {}

    header, rows = records_rows(records, L)
    paths["records"] = os.path.join(out_dir, "records.csv")
    write_csv(paths["records"], header, rows)

    var = hist.variance_series
    rows = [[str(t + 1)] + [str(int(c)) for c in counts] + [_fmt(v)] for t, (counts, v) in enumerate(zip(hist.counts, var))]
    paths["histogram"] = os.path.join(out_dir, "histogram.csv")
    write_csv(paths["histogram"], ["round"] + [f"n_{l + 1}" for l in range(L)] + ["variance"], rows)

    rows = []
    for r in records:
        for cid, srow in zip(r.participants, r.importance):
            rows.append([str(r.round), str(cid)] + [_fmt(v) for v in srow])
    paths["importance"] = os.path.join(out_dir, "importance.csv")
    write_csv(paths["importance"], ["round", "client_id"] + [f"S_{l + 1}" for l in range(L)], rows)

    paths["archive"] = os.path.join(out_dir, "archive.jsonl")
    with open(paths["archive"], "w") as fh:
        for t, entries in enumerate(archives or []):
            fh.write(json.dumps({"round": t + 1, "entries": entries}, sort_keys=True) + "\n")

    paths.update(render_plots(out_dir))
    return paths


def render_plots(out_dir):
    """(Re)build ``plots/*.svg`` from the CSVs in ``out_dir``."""
    rec_path = os.path.join(out_dir, "records.csv")
    if not os.path.exists(rec_path):
        raise ConfigError(f"{rec_path} not found")
    plots = os.path.join(out_dir, "plots")
    _ensure_dir(plots)
    paths = {}

    header, rows = read_csv(rec_path)
    glob = [r for r in rows if r[1] == "global"]
    rounds = [int(r[0]) for r in glob]
    series = {}
    if glob:
        series["train objective"] = (rounds, [float(r[-1]) for r in glob])
        series["global eval loss"] = (rounds, [float(r[2]) for r in glob])
    paths["loss_plot"] = os.path.join(plots, "loss.svg")
    with open(paths["loss_plot"], "w") as fh:
        fh.write(line_chart(series, "Loss per round"))

    hist_path = os.path.join(out_dir, "histogram.csv")
    total = np.zeros(0)
    if os.path.exists(hist_path):
        header, rows = read_csv(hist_path)
        if rows:
            total = np.array([[int(v) for v in r[1:-1]] for r in rows]).sum(axis=0)
    paths["histogram_plot"] = os.path.join(plots, "histogram.svg")
    with open(paths["histogram_plot"], "w") as fh:
        fh.write(bar_chart(total, "Layer selection histogram"))

    imp_path = os.path.join(out_dir, "importance.csv")
    ranks = np.zeros((0, 0))
    if os.path.exists(imp_path):
        header, rows = read_csv(imp_path)
        if rows:
            by_round = {}
            for r in rows:
                by_round.setdefault(int(r[0]), []).append([float(v) for v in r[2:]])
            ranks = rank_heatmap(np.array([np.mean(by_round[t], axis=0) for t in sorted(by_round)]))
    paths["rank_plot"] = os.path.join(plots, "rank_heatmap.svg")
    with open(paths["rank_plot"], "w") as fh:
        fh.write(heatmap(ranks, "Layer rank (mean importance) per round"))
    return paths
