"""Figures written alongside the text/JSON reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRIC_LABELS = {"stoi": "STOI", "pesq": "PESQ", "sdr": "SDR (dB)"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def loss_curve(steps, losses, path, dev=None, smooth: int = 25) -> Path:
    """Training loss per step (raw and moving average), optional dev points."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    losses = np.asarray(losses, dtype=float)
    ax.plot(steps, losses, color="0.75", lw=0.8, label="train")
    if len(losses) >= smooth > 1:
        kernel = np.ones(smooth) / smooth
        ax.plot(steps[smooth - 1:], np.convolve(losses, kernel, mode="valid"), color="C0", label=f"train ({smooth}-step mean)")
    if dev:
        ds, dl = zip(*dev)
        ax.plot(ds, dl, "o-", color="C3", ms=3, label="dev")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    return _save(fig, path)


def snr_trend(summary: list[dict], path) -> Path:
    """Noisy vs enhanced metric means as a function of input SNR."""
    summary = sorted(summary, key=lambda a: a["snr_db"])
    metrics = [m for m in METRIC_LABELS if any(m in a["noisy"] for a in summary)]
    fig, axes = plt.subplots(1, max(len(metrics), 1), figsize=(3.2 * max(len(metrics), 1), 3), squeeze=False)
    snrs = [a["snr_db"] for a in summary]
    for ax, m in zip(axes[0], metrics):
        for kind, style in (("noisy", "s--"), ("enhanced", "o-")):
            ax.plot(snrs, [a[kind].get(m, np.nan) for a in summary], style, label=kind)
        ax.set_xlabel("input SNR (dB)")
        ax.set_ylabel(METRIC_LABELS[m])
    axes[0][0].legend(frameon=False)
    return _save(fig, path)


def ablation_bars(rows: list[dict], path) -> Path:
    metrics = [m for m in ("pesq", "stoi", "sdr") if any(m in r for r in rows)]
    fig, axes = plt.subplots(1, max(len(metrics), 1), figsize=(3.2 * max(len(metrics), 1), 3), squeeze=False)
    labels = [r["method"] for r in rows]
    for ax, m in zip(axes[0], metrics):
        ax.bar(range(len(rows)), [r.get(m, np.nan) for r in rows], color=[f"C{i}" for i in range(len(rows))])
        ax.set_xticks(range(len(rows)), labels, rotation=30, ha="right", fontsize=8)
        ax.set_ylabel(METRIC_LABELS[m])
    return _save(fig, path)


def adjacency_heatmap(adjacency, path, title: str = "") -> Path:
    a = np.asarray(adjacency)
    fig, ax = plt.subplots(figsize=(3.2, 3))
    im = ax.imshow(a, cmap="viridis", vmin=0)
    ax.set_xlabel("mic j")
    ax.set_ylabel("mic i")
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)
