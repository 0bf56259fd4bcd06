"""CSV tables and dependency-free SVG scatter plots."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import numpy as np

from ..metrics import SampleBatch

__all__ = [
    "CSV_COLUMNS",
    "emit_csv",
    "emit_svg_scatter",
    "read_samples_csv",
    "sweep_plot_batches",
    "write_samples_csv",
    "write_trajectory_csv",
]

CSV_COLUMNS = ("lambda", "sampler", "transfer_error", "diversity", "n_samples", "seed_base")
CSV_COMMENT = "# transfer_error: energy distance to the oracle batch, lower is better (similarity analogue)"

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
)


def _g(v: float) -> str:
    return format(float(v), ".9g")


def emit_csv(res, path) -> Path:
    """Comment line, header, then one row per grid point sorted by (sampler, lambda)."""
    rows = sorted(res.rows, key=lambda r: (r.sampler, r.lam))
    buf = io.StringIO()
    buf.write(CSV_COMMENT + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_g(r.lam), r.sampler, _g(r.transfer_error), _g(r.diversity), r.n_samples, r.seed_base])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def write_samples_csv(samples: np.ndarray, seeds: Sequence[int], path) -> Path:
    d = samples.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", *(f"x{i}" for i in range(d))])
    for seed, row in zip(seeds, samples):
        w.writerow([seed, *(repr(float(v)) for v in row)])
    Path(path).write_text(buf.getvalue())
    return Path(path)


def write_trajectory_csv(frames: np.ndarray, T: int, path) -> Path:
    """``frames`` has shape ``(T + 1, d)`` from ``x_T`` to ``x_0``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *(f"x{i}" for i in range(frames.shape[1]))])
    for k, row in enumerate(frames):
        w.writerow([T - k, *(repr(float(v)) for v in row)])
    Path(path).write_text(buf.getvalue())
    return Path(path)


def read_samples_csv(path) -> np.ndarray:
    """Read the ``x*`` columns of a samples or trajectory CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        cols = [i for i, name in enumerate(header) if name.startswith("x")]
        if not cols:
            raise ValueError(f"{path}: no x0..x(d-1) columns")
        return np.array([[float(row[i]) for i in cols] for row in reader if row])


def sweep_plot_batches(res, sampler: str, per_batch: int = 400):
    """Oracle plus the first, middle and last lambda of a sweep, truncated for plotting."""
    lams = sorted(lam for (name, lam) in res.batches if name == sampler)
    picks = sorted({lams[0], lams[len(lams) // 2], lams[-1]}) if lams else []
    batches = [SampleBatch(res.oracles[sampler].samples[:per_batch])]
    labels = ["oracle"]
    for lam in picks:
        batches.append(SampleBatch(res.batches[(sampler, lam)].samples[:per_batch]))
        labels.append(f"lambda={lam:g}")
    return batches, labels


def emit_svg_scatter(batches: Sequence, path, styling: dict | None = None) -> Path:
    """Scatter plot of 2-D batches, one colour per batch, data extent plus 5% margin."""
    style = {"width": 480, "height": 480, "radius": 2.0, "opacity": 0.6, "labels": None, "title": None}
    style.update(styling or {})
    arrays = [b.samples if isinstance(b, SampleBatch) else np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in batches]
    if not arrays:
        raise ValueError("nothing to plot")
    for a in arrays:
        if a.ndim != 2 or a.shape[1] != 2:
            raise ValueError(f"scatter plots need 2-D samples, got shape {a.shape}")
    pts = np.concatenate(arrays)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    lo, hi = lo - 0.05 * span, hi + 0.05 * span
    vw, vh = hi - lo
    # data units are mapped to the viewBox directly; y is flipped so up is positive
    r = style["radius"] * max(vw, vh) / max(style["width"], style["height"])
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{style["width"]}" height="{style["height"]}" '
        f'viewBox="{lo[0]:.6g} {-hi[1]:.6g} {vw:.6g} {vh:.6g}">',
    ]
    if style["title"]:
        out.append(f"<title>{_escape(style['title'])}</title>")
    labels = style["labels"] or [f"batch {i}" for i in range(len(arrays))]
    for i, a in enumerate(arrays):
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<g id="batch{i}" fill="{color}" fill-opacity="{style["opacity"]}">')
        out.append(f"<desc>{_escape(labels[i])}</desc>")
        for x, y in a:
            out.append(f'<circle cx="{x:.5f}" cy="{-y:.5f}" r="{r:.5g}"/>')
        out.append("</g>")
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def _escape(text: str) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
