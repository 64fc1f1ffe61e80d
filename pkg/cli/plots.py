"""
SVG-графики по CSV-результатам: кривая потерь, развёртки с планками
погрешностей (mean ± std) и качество против числа параметров для CSC.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# одинаковые данные дают одинаковый SVG
plt.rcParams["svg.hashsalt"] = "volterrafuse"

METRIC_LABELS = {"acc": "ACC", "ari": "ARI", "nmi": "NMI"}


def _num(value: Optional[str]) -> Optional[float]:
    if value is None or value == "":
        return None
    return float(value)


def _save(fig: "plt.Figure", path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    return path


def loss_series(rows: list[dict[str, str]], key: str) -> tuple[list[int], list[float]]:
    """
    Точки кривой слагаемого key начиная с первой эпохи с положительным значением.

    Эпохи разогрева, где reg и selfexpr равны нулю, в серию не входят.
    """
    points = [(int(r["epoch"]), float(r[key])) for r in rows]
    start = next((i for i, (_, v) in enumerate(points) if v > 0), len(points))
    tail = points[start:]
    return [e for e, _ in tail], [v for _, v in tail]


def plot_loss(rows: list[dict[str, str]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("total", "recon", "selfexpr", "reg"):
        epochs, values = loss_series(rows, key)
        if epochs:
            ax.plot(epochs, values, label=key)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_sweep(rows: list[dict[str, str]], x_key: str, path: Path, title: str) -> Path:
    """
    Планки погрешностей по строкам mean/std развёртки.

    Для развёртки по доле рёбер каждая доля данных рисуется своей серией.
    """
    means = [r for r in rows if r["kind"] == "mean"]
    stds = {(r["fraction"], r["ratio"]): r for r in rows if r["kind"] == "std"}
    group_key = "fraction" if x_key == "ratio" else "ratio"
    groups = sorted({r[group_key] for r in means}, key=float)

    fig, axes = plt.subplots(1, len(METRIC_LABELS), figsize=(13, 4))
    for ax, (metric, label) in zip(axes, METRIC_LABELS.items()):
        for group in groups:
            series = sorted((r for r in means if r[group_key] == group), key=lambda r: float(r[x_key]))
            xs, ys, errs = [], [], []
            for r in series:
                y = _num(r[metric])
                if y is None:
                    continue
                xs.append(float(r[x_key]))
                ys.append(y)
                errs.append(_num(stds.get((r["fraction"], r["ratio"]), {}).get(metric)) or 0.0)
            if xs:
                ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=4, label=f"{group_key}={group}")
        ax.set_xlabel(x_key)
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
        if len(groups) > 1:
            ax.legend()
    fig.suptitle(title)
    return _save(fig, path)


def plot_csc(rows: list[dict[str, str]], path: Path) -> Path:
    """ACC против числа параметров самовыражающего слоя: полносвязный и CSC."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for prefix, marker, label in (("fc", "s", "fully connected"), ("csc", "o", "CSC")):
        xs, ys, notes = [], [], []
        for r in rows:
            x = _num(r[f"{prefix}_params"])
            y = _num(r[f"{prefix}_acc"])
            if x is None or y is None:
                continue
            xs.append(x)
            ys.append(y)
            notes.append(r["fraction"])
        if xs:
            ax.plot(xs, ys, marker=marker, linestyle="--", label=label)
            for x, y, note in zip(xs, ys, notes):
                ax.annotate(note, (x, y), textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xscale("log")
    ax.set_xlabel("self-expressive parameters")
    ax.set_ylabel("ACC")
    ax.grid(True, alpha=0.3)
    ax.legend()
    return _save(fig, path)
