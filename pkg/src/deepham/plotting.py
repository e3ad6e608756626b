"""Static SVG figures for rollouts (space-time fields and Hamiltonian series)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path, config_hash):
    plt.rcParams["svg.hashsalt"] = config_hash or "deepham"
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": f"config_hash={config_hash}"})
    plt.close(fig)
    return path


def field_heatmaps(path, times, x, u, ut, title: str, config_hash: str = ""):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), constrained_layout=True)
    extent = [times[0], times[-1], x[0], x[-1] + (x[1] - x[0])]
    for ax, data, name in zip(axes, (u, ut), ("u", "u_t")):
        im = ax.imshow(np.asarray(data).T, origin="lower", aspect="auto", extent=extent, cmap="RdBu_r")
        ax.set_xlabel("t")
        ax.set_ylabel("x")
        ax.set_title(f"{title}: {name}")
        fig.colorbar(im, ax=ax)
    return _save(fig, path, config_hash)


def hamiltonian_plot(path, times, h_learned_on_true, h_true_on_learned, config_hash: str = ""):
    fig, ax = plt.subplots(figsize=(5, 3.5), constrained_layout=True)
    if h_learned_on_true is not None:
        ax.plot(times, h_learned_on_true, color="red", label="H_NO(u, u_t) - H_NO(t=0)")
    if h_true_on_learned is not None:
        ax.plot(times, h_true_on_learned, color="blue", label="H(u_NO, u_t_NO)")
    ax.set_xlabel("t")
    ax.set_ylabel("Hamiltonian")
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path, config_hash)
