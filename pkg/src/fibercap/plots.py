"""Static figures from CLI output files (matplotlib, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def capacity_figure(rows, path):
    """Capacity and bound columns against SNR in dB."""
    snr = np.array([float(r["snr_db"]) for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    for col, style in [("capacity_nats", "o-"), ("halfgaussian_nats", "s--"),
                       ("lb_theorem1", ":"), ("lb_medium", "-."), ("lb_high", "--")]:
        if col in rows[0]:
            y = np.array([float(r[col]) for r in rows])
            if np.any(np.isfinite(y)):
                ax.plot(snr, y, style, label=col, ms=3)
    ax.set_xlabel("SNR P / (sigma2 L)  [dB]")
    ax.set_ylabel("nats per sample")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def pdf_figure(r, phi, density, path):
    """Conditional density on the ring grid, drawn in the complex plane."""
    fig, ax = plt.subplots(figsize=(5, 5))
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    sc = ax.scatter(x, y, c=density, s=4, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="density")
    ax.set_aspect("equal")
    ax.set_xlabel("Re q")
    ax.set_ylabel("Im q")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def sample_figure(r, phi, path, bins=80):
    """2-D histogram of output samples."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.hist2d(r * np.cos(phi), r * np.sin(phi), bins=bins, cmap="magma")
    ax.set_aspect("equal")
    ax.set_xlabel("Re q")
    ax.set_ylabel("Im q")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
