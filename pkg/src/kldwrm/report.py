"""Multi-seed summary tables and SVG learning curves."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .trainer import RunMetrics

# published mean/sd test accuracy (percent) over ten 50-epoch runs of a small
# conv net; shown next to our numbers for context, never compared against
REFERENCE_ACCURACY = {
    "kfac": (96.19, 3.2),
    "so": (97.60, 0.85),
    "q": (97.69, 0.69),
    "qe": (97.73, 0.63),
}


@dataclass
class SummaryTable:
    n_runs: int
    mean_acc: float
    sd_acc: float
    mean_loss: float
    sd_loss: float
    counts: dict = field(default_factory=dict)
    sd_undefined: bool = False
    n_diverged: int = 0

    def to_text(self, label: str = "") -> str:
        lines = []
        if label:
            lines.append(f"[{label}]")
        flag = " (single run, sd undefined)" if self.sd_undefined else ""
        lines.append(f"runs={self.n_runs} diverged={self.n_diverged}")
        lines.append(f"mu_acc={self.mean_acc:.6f} sd_acc={self.sd_acc:.6f}{flag}")
        lines.append(f"mu_loss={self.mean_loss:.6f} sd_loss={self.sd_loss:.6f}{flag}")
        for k, v in self.counts.items():
            lines.append(f"N[{k}]={v}")
        ref = REFERENCE_ACCURACY.get(label)
        if ref:
            lines.append(f"reference mu_acc={ref[0]}% sd_acc={ref[1]}% (different model, not comparable)")
        return "\n".join(lines) + "\n"


def _mean_sd(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 1:
        return float(x[0]), 0.0
    return float(np.mean(x)), float(np.std(x, ddof=1))


def summarize(runs) -> SummaryTable:
    """Final-epoch mean/sd of test accuracy and loss, and best-epoch threshold counts.

    Threshold counts use the best value a run reached at any epoch, so a run
    counts even if it degrades afterwards.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("no runs to summarize")
    lengths = {len(r.rows) for r in runs if not r.diverged}
    if len(lengths) > 1:
        raise ValueError(f"runs have different epoch counts: {sorted(lengths)}")
    if any(not r.rows for r in runs):
        raise ValueError("a run has no rows")
    final_acc = [r.rows[-1]["test_acc"] for r in runs]
    final_loss = [r.rows[-1]["test_loss"] for r in runs]
    mu_a, sd_a = _mean_sd(final_acc)
    mu_l, sd_l = _mean_sd(final_loss)
    best_acc = [np.nanmax(r.column("test_acc")) if not np.all(np.isnan(r.column("test_acc"))) else math.nan for r in runs]
    best_loss = [np.nanmin(r.column("test_loss")) for r in runs]
    counts = {
        "acc>=0.98": sum(a >= 0.98 for a in best_acc),
        "acc>0.98": sum(a > 0.98 for a in best_acc),
        "acc>=0.985": sum(a >= 0.985 for a in best_acc),
        "loss<=0.25": sum(l <= 0.25 for l in best_loss),
        "loss<=0.2": sum(l <= 0.2 for l in best_loss),
    }
    return SummaryTable(
        n_runs=len(runs), mean_acc=mu_a, sd_acc=sd_a, mean_loss=mu_l, sd_loss=sd_l,
        counts={k: int(v) for k, v in counts.items()}, sd_undefined=len(runs) == 1,
        n_diverged=sum(1 for r in runs if r.diverged),
    )


# plotting

_W, _H = 480, 300
_MARGIN = 48
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
PLOT_METRICS = ("train_loss", "test_loss", "test_acc")


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _panel(metric, runs, labels, x0, y0) -> list:
    series = []
    for r in runs:
        ep = r.column("epoch")
        val = r.column(metric)
        keep = np.isfinite(val)
        series.append((ep[keep], val[keep]))
    allx = np.concatenate([s[0] for s in series]) if series else np.zeros(0)
    ally = np.concatenate([s[1] for s in series]) if series else np.zeros(0)
    out = [f'<g class="panel" data-metric="{metric}" transform="translate({x0},{y0})">']
    out.append(f'<text x="{_W / 2:.0f}" y="16" text-anchor="middle">{metric}</text>')
    pw, ph = _W - 2 * _MARGIN, _H - 2 * _MARGIN
    out.append(f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>')
    if ally.size == 0:
        out.append("</g>")
        return out
    xmin, xmax = float(allx.min()), float(allx.max())
    ymin, ymax = float(ally.min()), float(ally.max())
    xspan = xmax - xmin or 1.0
    yspan = ymax - ymin or 1.0
    out[0] = out[0][:-1] + f' data-xmin="{xmin!r}" data-xmax="{xmax!r}" data-ymin="{ymin!r}" data-ymax="{ymax!r}">'
    out.append(f'<text x="{_MARGIN - 4}" y="{_MARGIN + ph}" text-anchor="end" font-size="10">{ymin:.4g}</text>')
    out.append(f'<text x="{_MARGIN - 4}" y="{_MARGIN + 8}" text-anchor="end" font-size="10">{ymax:.4g}</text>')
    out.append(f'<text x="{_MARGIN}" y="{_MARGIN + ph + 14}" font-size="10">{xmin:.4g}</text>')
    out.append(f'<text x="{_MARGIN + pw}" y="{_MARGIN + ph + 14}" text-anchor="end" font-size="10">{xmax:.4g}</text>')
    for i, ((ex, ey), label) in enumerate(zip(series, labels)):
        if ex.size == 0:
            continue
        px = _MARGIN + (ex - xmin) / xspan * pw
        py = _MARGIN + ph - (ey - ymin) / yspan * ph
        if px.size == 1:
            px = np.repeat(px, 2)
            py = np.repeat(py, 2)
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px, py))
        color = _COLORS[i % len(_COLORS)]
        out.append(f'<polyline data-run="{label}" fill="none" stroke="{color}" points="{pts}"/>')
    out.append("</g>")
    return out


def render_curves(runs, output_path, labels=None, metrics=PLOT_METRICS) -> str:
    """Write one panel per metric, one polyline per run; returns the SVG text."""
    runs = list(runs)
    if not runs:
        raise ValueError("no runs to plot")
    labels = list(labels) if labels is not None else [f"run{i}" for i in range(len(runs))]
    height = _H * len(metrics)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{height}" viewBox="0 0 {_W} {height}" font-family="sans-serif" font-size="12">',
    ]
    for j, metric in enumerate(metrics):
        parts.extend(_panel(metric, runs, labels, 0, j * _H))
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    with open(output_path, "w") as fh:
        fh.write(text)
    return text


def load_runs(paths) -> list:
    return [RunMetrics.read(p) for p in paths]
