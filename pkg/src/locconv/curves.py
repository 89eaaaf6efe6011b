"""Learning-curve tables and a dependency-free SVG chart."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Optional

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def summarize(per_model: dict) -> list:
    """``{model: [per-seed error lists]}`` -> rows of (model, epoch, mean, min, max)."""
    if not per_model:
        raise ValueError("no learning curves to summarize")
    rows = []
    for name, runs in per_model.items():
        if not runs or not runs[0]:
            raise ValueError(f"model {name!r} has no completed epochs")
        n = min(len(r) for r in runs)
        arr = np.array([r[:n] for r in runs], dtype=np.float64)
        for e in range(n):
            col = arr[:, e]
            rows.append({"model": name, "epoch": e + 1, "mean": float(np.mean(col)),
                         "min": float(col.min()), "max": float(col.max())})
    return rows


def emit_learning_curves(per_model: dict, csv_path, svg_path=None, ylabel: str = "error") -> list:
    rows = summarize(per_model)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "epoch", "mean", "min", "max"))
        for r in rows:
            w.writerow((r["model"], r["epoch"], repr(r["mean"]), repr(r["min"]), repr(r["max"])))
    if svg_path is not None:
        Path(svg_path).write_text(render_svg(rows, ylabel))
    return rows


def render_svg(rows: list, ylabel: str = "error", width: int = 640, height: int = 400) -> str:
    left, right, top, bottom = 70, 160, 20, 50
    pw, ph = width - left - right, height - top - bottom
    positive = [v for r in rows for v in (r["min"], r["mean"], r["max"]) if v > 0]
    lo = math.floor(math.log10(min(positive))) if positive else -1
    hi = math.ceil(math.log10(max(positive))) if positive else 0
    hi = hi if hi > lo else lo + 1
    max_epoch = max(r["epoch"] for r in rows)

    def sx(epoch):
        return left + (pw * (epoch - 1) / (max_epoch - 1) if max_epoch > 1 else pw / 2)

    def sy(v):
        v = max(v, 10.0 ** lo)
        return top + ph * (hi - math.log10(v)) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="white" stroke="black"/>']
    for k in range(lo, hi + 1):
        y = sy(10.0 ** k)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">1e{k}</text>')
    for e in sorted({1, max_epoch, (max_epoch + 1) // 2}):
        out.append(f'<text x="{sx(e):.2f}" y="{top + ph + 16}" text-anchor="middle">{e}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">epoch</text>')
    out.append(f'<text x="14" y="{top + ph / 2}" transform="rotate(-90 14 {top + ph / 2})" '
               f'text-anchor="middle">{ylabel} (log scale)</text>')

    models = list(dict.fromkeys(r["model"] for r in rows))
    for i, name in enumerate(models):
        colour = PALETTE[i % len(PALETTE)]
        pts = [r for r in rows if r["model"] == name]
        upper = " ".join(f"{sx(r['epoch']):.2f},{sy(r['max']):.2f}" for r in pts)
        lower = " ".join(f"{sx(r['epoch']):.2f},{sy(r['min']):.2f}" for r in reversed(pts))
        out.append(f'<polygon points="{upper} {lower}" fill="{colour}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{sx(r['epoch']):.2f},{sy(r['mean']):.2f}" for r in pts)
        out.append(f'<polyline points="{line}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_curves(path) -> list:
    with open(path, newline="") as fh:
        return [{"model": r["model"], "epoch": int(r["epoch"]), "mean": float(r["mean"]),
                 "min": float(r["min"]), "max": float(r["max"])} for r in csv.DictReader(fh)]
