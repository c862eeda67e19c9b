"""Report figures rendered alongside the delimited outputs.

Every experiment that writes CSV results also renders matplotlib PNGs of
the same data into its output directory (switchable off in the config).
The CSVs remain the source of truth; figures are for eyeballing runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_traces_figure(traces: dict, path, title: str = "normalized received power") -> None:
    """One line per subarray of normalized power vs iteration (smoothed
    with a short moving average so the noisy raw trace stays readable)."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for label, values in traces.items():
        values = np.asarray(values, dtype=np.float64)
        window = max(1, min(200, values.size // 20))
        if window > 1:
            kernel = np.full(window, 1.0 / window)
            smooth = np.convolve(values, kernel, mode="valid")
            x = np.arange(window, values.size + 1)
        else:
            smooth, x = values, np.arange(1, values.size + 1)
        ax.plot(x, smooth, linewidth=1.0, label=str(label))
    ax.set_xlabel("iteration")
    ax.set_ylabel("normalized power")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if len(traces) <= 12:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_phase_figure(image: np.ndarray, path, title: str = "phase pattern") -> None:
    """Cyclic colormap rendering of a phase image."""
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(image, cmap="hsv", vmin=0.0, vmax=2.0 * np.pi, origin="lower",
                   interpolation="nearest")
    ax.set_title(title)
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    fig.colorbar(im, ax=ax, label="phase (rad)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_power_map_figure(values: np.ndarray, u_offsets: np.ndarray, v_offsets: np.ndarray,
                          path, radius: float | None = None,
                          title: str = "received power on the focal plane") -> None:
    """Heatmap of the focal-plane power, optionally with the spot-radius
    circle drawn around the center."""
    fig, ax = plt.subplots(figsize=(5.5, 4.8))
    extent = (u_offsets[0], u_offsets[-1], v_offsets[0], v_offsets[-1])
    im = ax.imshow(values, extent=extent, origin="lower", cmap="inferno")
    if radius is not None:
        circle = plt.Circle((0.0, 0.0), radius, color="cyan", fill=False, linewidth=1.5)
        ax.add_patch(circle)
    ax.set_xlabel("in-plane offset u (m)")
    ax.set_ylabel("in-plane offset v (m)")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="power")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_grid_figure(values: np.ndarray, path, title: str, label: str,
                     vmin: float | None = None, vmax: float | None = None) -> None:
    """Annotated heatmap of a per-subarray quantity on the module grid."""
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(values, cmap="viridis", origin="lower", vmin=vmin, vmax=vmax)
    for (r, c), v in np.ndenumerate(values):
        if np.isfinite(v):
            ax.text(c, r, f"{v:.2f}", ha="center", va="center", fontsize=8, color="white")
    ax.set_xlabel("module column")
    ax.set_ylabel("module row")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label=label)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bars_figure(labels, values, path, ylabel: str, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(labels))
    ax.bar(x, values, width=0.6)
    ax.set_xticks(x)
    ax.set_xticklabels([str(l) for l in labels], rotation=20, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_line_figure(x, y, path, xlabel: str, ylabel: str, title: str,
                     logx: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, y, marker="o")
    if logx:
        ax.set_xscale("log", base=2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
