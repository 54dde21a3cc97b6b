"""Static figures written next to CSV outputs."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def shrink_curves(path, curves: Mapping[str, tuple[np.ndarray, np.ndarray, np.ndarray]]) -> None:
    """Two panels per figure: ``phi(t)`` and the shrunk value ``t nu(t)``.

    ``curves`` maps a label to ``(t, phi, shrunk)`` arrays.
    """
    fig, (ax_phi, ax_shrink) = plt.subplots(1, 2, figsize=(9, 3.6))
    for label, (t, ph, sh) in curves.items():
        ax_phi.plot(t, ph, label=label)
        ax_shrink.plot(t, sh, label=label)
    if curves:
        t = next(iter(curves.values()))[0]
        ax_shrink.plot(t, t, color="0.6", lw=0.8, ls="--", label="identity")
    ax_phi.set_title("metric")
    ax_phi.set_xlabel("t")
    ax_shrink.set_title("shrinkage  t nu(t)")
    ax_shrink.set_xlabel("t")
    ax_shrink.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cost_vs_time(path, series: Mapping[str, tuple[np.ndarray, np.ndarray]], log_y: bool = True) -> None:
    """Cost curves against wall-clock seconds, one line per algorithm."""
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for label, (seconds, cost) in series.items():
        ax.plot(seconds, cost, label=label)
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel("seconds")
    ax.set_ylabel("cost")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def image_panels(
    path,
    images: Sequence[tuple[str, np.ndarray | None]],
    max_intensity: float = 255.0,
    ncols: int | None = None,
) -> None:
    """Magnitude panels on a fixed ``[0, max_intensity]`` scale; ``None`` leaves a slot empty."""
    n = len(images)
    ncols = ncols or min(n, 4)
    nrows = -(-n // ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(2.6 * ncols, 2.8 * nrows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for ax, (title, img) in zip(axes.ravel(), images):
        if img is None:
            continue
        ax.imshow(np.abs(img), cmap="gray", vmin=0.0, vmax=max_intensity)
        ax.set_title(title, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
