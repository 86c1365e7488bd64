"""Matplotlib figures for a finished run: density map and convergence history."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> None:
    fd, tmp = tempfile.mkstemp(prefix=f".{path.stem}.", suffix=path.suffix, dir=path.parent)
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=120, metadata={"Software": None})
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    finally:
        plt.close(fig)


def plot_density(problem, field, ax=None):
    grid = problem.grid
    img = grid.to_image(field.rho)
    if ax is None:
        _, ax = plt.subplots(figsize=(6, 6 * grid.ny / grid.nx + 0.6))
    extent = (0, grid.nx * grid.elem_w, 0, grid.ny * grid.elem_h)
    ax.imshow(img, cmap="gray_r", vmin=0.0, vmax=1.0, extent=extent, interpolation="nearest")
    ax.set_title(f"{problem.name}: density")
    ax.set_xticks([])
    ax.set_yticks([])
    return ax


def plot_convergence(record, axes=None):
    if axes is None:
        _, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    it = record.column("iter")
    axes[0].plot(it, record.column("compliance"), color="C0")
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("compliance")
    kkt = record.column("kkt_inf")
    axes[1].semilogy(it, np.where(kkt > 0, kkt, np.nan), color="C1", label="KKT residual")
    change = record.column("max_change")
    axes[1].semilogy(it, np.where(change > 0, change, np.nan), color="C2", label="max change")
    axes[1].set_xlabel("iteration")
    axes[1].legend()
    return axes


def render_report(problem, field, record, out_dir) -> list[str]:
    """Write ``density.png`` and ``convergence.png`` into ``out_dir``."""
    out = Path(out_dir)
    ax = plot_density(problem, field)
    ax.figure.tight_layout()
    _save(ax.figure, out / "density.png")
    axes = plot_convergence(record)
    axes[0].figure.tight_layout()
    _save(axes[0].figure, out / "convergence.png")
    return ["density.png", "convergence.png"]
