"""Plot the residual trace and the price sweep written by the command-line tool.

Usage::

    jointmarket --scenario ref --mode decentralized --sweep --out results/
    python scripts/plot_results.py results/

Writes residuals.png and sweep.png next to the CSV files. Needs matplotlib.
"""

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def load(path):
    return np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")


def plot_residuals(out_dir):
    r = load(out_dir / "residuals.csv")
    fig, ax = plt.subplots(figsize=(7, 4))
    it = np.arange(len(r))
    for key, label in [("se", "energy"), ("sr", "reserve"), ("sd", "flexibility"), ("sc", "carbon")]:
        ax.semilogy(it, np.maximum(r[key], 1e-12), label=f"primal {label}")
    for k in it[r["round_start"].astype(bool)][1:]:
        ax.axvline(k, color="grey", lw=0.5, ls=":")
    ax.set_xlabel("inner iteration (all rounds)")
    ax.set_ylabel("residual")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "residuals.png", dpi=150)


def plot_sweep(out_dir):
    s = load(out_dir / "sweep.csv")
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    for r_c in np.unique(s["r_c"]):
        m = s["r_c"] == r_c
        for ax, key in zip(axes, ("welfare", "allowances_to_manager", "pv_to_manager")):
            ax.plot(s["r_e"][m], s[key][m], marker="o", label=f"r_c = {r_c:g}")
    for ax, title in zip(axes, ("welfare ($)", "allowances to manager (kg)", "PV to manager (kWh)")):
        ax.set_xlabel("r_e ($/kWh)")
        ax.set_title(title)
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_dir / "sweep.png", dpi=150)


if __name__ == "__main__":
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "results")
    if (out / "residuals.csv").exists():
        plot_residuals(out)
    if (out / "sweep.csv").exists():
        plot_sweep(out)
