"""Figure rendering for the report path.

Each helper takes already-assembled report data and writes one PNG next to
the delimited output. Rendering is headless (Agg) and deterministic apart
from matplotlib versioning.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_selection_timeline(
    activity: np.ndarray,
    indices: list[int],
    out_file: str | Path,
    label: str = "activity",
) -> Path:
    """Activity curve with retained timesteps marked."""
    out_file = Path(out_file)
    fig, ax = plt.subplots(figsize=(8, 3))
    t = np.arange(len(activity))
    ax.plot(t, activity, lw=1.0, color="tab:blue", label=label)
    idx = np.asarray(indices, dtype=int)
    ax.plot(idx, np.asarray(activity)[idx], ".", ms=4, color="tab:red", label="retained")
    ax.set_xlabel("timestep")
    ax.set_ylabel(label)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_file, dpi=150)
    plt.close(fig)
    return out_file


def plot_fidelity(rows: list[dict], out_file: str | Path) -> Path:
    """Per-retained-snapshot relative l2 error on a log axis."""
    out_file = Path(out_file)
    ok = [r for r in rows if r.get("rel_l2") is not None]
    fig, ax = plt.subplots(figsize=(8, 3))
    if ok:
        ax.semilogy([r["timestep"] for r in ok], [r["rel_l2"] for r in ok], "o-", ms=3, lw=1.0)
    ax.set_xlabel("timestep")
    ax.set_ylabel("rel l2")
    fig.tight_layout()
    fig.savefig(out_file, dpi=150)
    plt.close(fig)
    return out_file


def plot_pareto(points: list[dict], out_file: str | Path) -> Path:
    """Accuracy-memory scatter: stored KiB per snapshot vs mean rel l2."""
    out_file = Path(out_file)
    fig, ax = plt.subplots(figsize=(5, 4))
    for p in points:
        ax.scatter(p["mem_kib_per_snapshot"], p["mean_rel_l2"], s=30)
        ax.annotate(
            p["label"],
            (p["mem_kib_per_snapshot"], p["mean_rel_l2"]),
            textcoords="offset points",
            xytext=(5, 3),
            fontsize=8,
        )
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("parameter memory per snapshot (KiB)")
    ax.set_ylabel("mean rel l2")
    fig.tight_layout()
    fig.savefig(out_file, dpi=150)
    plt.close(fig)
    return out_file
