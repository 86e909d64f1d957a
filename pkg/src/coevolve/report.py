"""Figures and a summary table from a training run directory.

Reads ``metrics.csv`` and ``hn_hist.csv`` as written by ``coevolve train``.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .trainer import read_epoch_logs  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def read_histograms(path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Map epoch -> (bin edges, counts)."""
    rows = defaultdict(list)
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows[int(r["epoch"])].append((float(r["bin_left"]), float(r["bin_right"]), int(r["count"])))
    out = {}
    for epoch, items in rows.items():
        edges = np.array([items[0][0]] + [hi for _, hi, _ in items])
        out[epoch] = (edges, np.array([c for _, _, c in items]))
    return out


def _series(rows, key):
    return np.array([r["epoch"] for r in rows]), np.array([r[key] for r in rows], dtype=float)


def _save(fig, out: Path, name: str, fmt: str) -> Path:
    path = out / f"{name}.{fmt}"
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_homophily(co, static, out, fmt):
    fig, ax = plt.subplots()
    ax.plot(*_series(co, "homophily"), color="C0", label="dynamic graph")
    if not math.isnan(static):
        ax.axhline(static, color="0.4", ls="--", lw=1, label=f"static graph ({static:.3f})")
    ax.set_xlabel("co-evolution epoch")
    ax.set_ylabel("homophily ratio")
    ax.set_ylim(0, 1)
    ax.legend()
    return _save(fig, out, "homophily", fmt)


def plot_hn_histograms(hists, out, fmt):
    first, last = min(hists), max(hists)
    fig, ax = plt.subplots()
    for epoch, color in ((first, "C3"), (last, "C0")):
        edges, counts = hists[epoch]
        centers = 0.5 * (edges[:-1] + edges[1:])
        mean = float((centers * counts).sum() / max(counts.sum(), 1))
        ax.stairs(counts, edges, fill=True, alpha=0.45, color=color, label=f"epoch {epoch} (mean {mean:.3f})")
    ax.set_xlabel("cosine similarity of hard-negative pairs")
    ax.set_ylabel("pairs")
    ax.legend()
    return _save(fig, out, "hard_negatives", fmt)


def plot_entropy(co, out, fmt):
    fig, ax = plt.subplots()
    ax.plot(*_series(co, "entropy_llm"), color="C1", label="semantic view")
    ax.plot(*_series(co, "entropy_gnn"), color="C2", label="structural view")
    ax.set_xlabel("co-evolution epoch")
    ax.set_ylabel("mean normalized entropy")
    ax.set_ylim(bottom=0)
    ax.legend()
    return _save(fig, out, "entropy", fmt)


def plot_accuracy(co, out, fmt):
    fig, ax = plt.subplots()
    ax.plot(*_series(co, "test_acc"), color="k", label="fused")
    ax.plot(*_series(co, "test_acc_llm"), color="C1", lw=1, label="semantic view")
    ax.plot(*_series(co, "test_acc_gnn"), color="C2", lw=1, label="structural view")
    ax.set_xlabel("co-evolution epoch")
    ax.set_ylabel("test accuracy")
    ax.legend()
    return _save(fig, out, "accuracy", fmt)


def render_report(run, out, fmt: str = "png"):
    """Write figures into ``out``; return (summary rows, figure paths)."""
    run, out = Path(run), Path(out)
    out.mkdir(parents=True, exist_ok=True)
    logs = read_epoch_logs(run / "metrics.csv")
    warm = [r for r in logs if r["phase"] == "warmup"]
    co = [r for r in logs if r["phase"] == "coevolve"]
    static = warm[-1]["homophily"] if warm else math.nan
    figures = []
    rows = [("metric", "first", "last")]
    with plt.rc_context(STYLE):
        if co:
            figures += [plot_homophily(co, static, out, fmt), plot_entropy(co, out, fmt),
                        plot_accuracy(co, out, fmt)]
            for key in ("homophily", "hn_cos_tracked", "hn_cos_mined", "entropy_gnn", "entropy_llm",
                        "beta_mean", "val_acc", "test_acc"):
                rows.append((key, f"{co[0][key]:.6g}", f"{co[-1][key]:.6g}"))
        hist_path = run / "hn_hist.csv"
        if hist_path.exists():
            hists = read_histograms(hist_path)
            if hists:
                figures.append(plot_hn_histograms(hists, out, fmt))
    if not math.isnan(static):
        rows.append(("static_homophily", f"{static:.6g}", f"{static:.6g}"))
    return rows, figures
