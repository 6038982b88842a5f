"""Matplotlib figures written next to the numeric outputs (never shown interactively)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _imshow(ax, image, title, cmap="gray", vmin=None, vmax=None):
    im = ax.imshow(image, cmap=cmap, vmin=vmin, vmax=vmax)
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])
    return im


def object_figure(path, obj: np.ndarray, title: str = "") -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(7, 3.4), constrained_layout=True)
    # phase relative to the mean so weak contrast is not split by the wrap
    mean = obj.mean()
    phase = np.angle(obj * np.conj(mean / abs(mean))) if mean != 0 else np.angle(obj)
    im = _imshow(axes[0], phase, "phase minus mean (rad)", "viridis")
    fig.colorbar(im, ax=axes[0], shrink=0.8)
    im = _imshow(axes[1], np.abs(obj), "amplitude")
    fig.colorbar(im, ax=axes[1], shrink=0.8)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def validation_figure(path, images: dict, report: dict) -> Path:
    """Object, expected (band-limited), reconstruction and difference phases, plus VBF."""
    fig, axes = plt.subplots(2, 5, figsize=(14, 5.8), constrained_layout=True)
    keys = ["object", "expected", "reconstruction", "difference"]
    titles = ["object", "band-limited object", "reconstruction", "difference"]
    for col, (key, title) in enumerate(zip(keys, titles)):
        img = images[key]
        _imshow(axes[0, col], np.angle(img), f"{title}: phase", "twilight", -np.pi, np.pi)
        _imshow(axes[1, col], np.abs(img), f"{title}: amplitude")
    _imshow(axes[0, 4], images["vbf"], "virtual bright field")
    axes[1, 4].axis("off")
    lines = [f"{k}: {v:.4g}" if isinstance(v, float) else f"{k}: {v}" for k, v in report.items()]
    axes[1, 4].text(0.0, 1.0, "\n".join(lines), va="top", family="monospace", fontsize=8)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def snapshot_figure(path, snapshots: list[tuple[int, np.ndarray]], total: int) -> Path:
    n = len(snapshots)
    fig, axes = plt.subplots(1, n, figsize=(2.6 * n, 2.9), constrained_layout=True, squeeze=False)
    for ax, (seen, obj) in zip(axes[0], snapshots):
        mean = obj.mean()
        phase = np.angle(obj * np.conj(mean / abs(mean))) if mean != 0 else np.angle(obj)
        _imshow(ax, phase, f"{seen}/{total} frames", "viridis")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def benchmark_figures(out_dir, rows: list[dict]) -> list[Path]:
    """Peak memory against detector size and throughput against worker count."""
    out_dir = Path(out_dir)
    written = []
    modes = sorted({r["mode"] for r in rows})

    fig, ax = plt.subplots(figsize=(5, 4), constrained_layout=True)
    for mode in modes:
        pts = {}
        for r in rows:
            if r["mode"] == mode and r["workers"] == 1:
                pts.setdefault(r["Ny"], []).append(r["peak_mb"])
        if len(pts) > 1:
            n = sorted(pts)
            ax.loglog(n, [np.median(pts[k]) for k in n], "o-", label=mode)
    if ax.lines:
        ax.set_xlabel("detector size N (px)")
        ax.set_ylabel("peak RSS (MB)")
        ax.legend()
        fig.savefig(out_dir / "memory.png", dpi=110)
        written.append(out_dir / "memory.png")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4), constrained_layout=True)
    for r_mode in modes:
        pts = {}
        for r in rows:
            if r["mode"] == r_mode:
                pts.setdefault(r["workers"], []).append(r["fps"])
        if len(pts) > 1:
            w = sorted(pts)
            ax.plot(w, [np.median(pts[k]) for k in w], "o-", label=r_mode)
    if ax.lines:
        ax.set_xlabel("workers")
        ax.set_ylabel("frames / s")
        ax.legend()
        fig.savefig(out_dir / "scaling.png", dpi=110)
        written.append(out_dir / "scaling.png")
    plt.close(fig)
    return written
