"""Figures written next to CLI reports. Uses the Agg backend, files only."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench_eval import DIMENSIONS  # noqa: E402

SEGMENT_COLORS = {"text": "#4c72b0", "image": "#55a868", "latent": "#c44e52"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_mask(mask, layout=None, path="mask.png", title=None) -> Path:
    n = mask.size
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(mask.dense(), cmap="Greys", interpolation="nearest", vmin=0, vmax=1)
    if layout is not None:
        off = layout.offsets
        for b in (off["image"], off["latent"]):
            ax.axhline(b - 0.5, color="tab:red", lw=0.8)
            ax.axvline(b - 0.5, color="tab:red", lw=0.8)
        start = 0
        for size in layout.text_group_sizes[:-1]:
            start += size
            ax.axhline(start - 0.5, color="tab:blue", lw=0.4, ls=":")
            ax.axvline(start - 0.5, color="tab:blue", lw=0.4, ls=":")
        ticks = [(off["image"]) / 2, (off["image"] + off["latent"]) / 2, (off["latent"] + n) / 2]
        ax.set_xticks(ticks, ["text", "image", "latent"])
        ax.set_yticks(ticks, ["text", "image", "latent"], rotation=90, va="center")
    ax.set_xlabel("key")
    ax.set_ylabel("query")
    ax.set_title(title or f"attention mask ({n} tokens)")
    return _save(fig, path)


def plot_scores(rows: Sequence[Mapping], path="scores.png", title="benchmark scores") -> Path:
    """Grouped bars: one group per run, bars for the four dimensions and both aggregates."""
    keys = list(DIMENSIONS) + ["overall", "weighted"]
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(rows) + 2), 4))
    width = 0.8 / len(keys)
    for k, key in enumerate(keys):
        xs = [i + (k - len(keys) / 2 + 0.5) * width for i in range(len(rows))]
        ax.bar(xs, [r.get(key, 0.0) for r in rows], width, label=key)
    ax.set_xticks(range(len(rows)), [r.get("label", str(i)) for i, r in enumerate(rows)], rotation=20, ha="right")
    ax.set_ylim(0, 5)
    ax.set_ylabel("score (1-5)")
    ax.set_title(title)
    ax.legend(ncol=3, fontsize=8)
    return _save(fig, path)


def plot_perturbation(rows: Sequence[Mapping], path="perturb.png") -> Path:
    """Mean changed mask bits per perturbation ratio."""
    by_ratio: dict[float, list[int]] = {}
    for r in rows:
        by_ratio.setdefault(float(r["ratio"]), []).append(int(r["changed_bits"]))
    ratios = sorted(by_ratio)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([100 * r for r in ratios], [sum(v) / len(v) for v in (by_ratio[r] for r in ratios)], "o-")
    ax.set_xlabel("perturbation ratio (%)")
    ax.set_ylabel("mean changed mask bits")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_norms(runs: Mapping[str, Sequence[float]], path="norms.png") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, norms in runs.items():
        ax.plot(range(1, len(norms) + 1), norms, "o-", label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("latent norm")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)
