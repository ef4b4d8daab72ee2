"""Figure rendering for the report paths. Files are written next to the
delimited output; callers pick the paths."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import RunRecord
from .metrics import PruningCurve

_BASELINE_STYLE = {
    "coordinated": dict(color="tab:blue", marker="o"),
    "random": dict(color="tab:orange", marker="s"),
    "spatial_only": dict(color="tab:green", marker="^"),
}


def save_sweep_figure(records: list[RunRecord], path: str) -> str:
    """Median salient MSE and communication rate versus budget fraction."""
    fractions = sorted({r.budget_fraction for r in records})
    baselines = sorted({r.baseline for r in records})
    fig, (ax_mse, ax_rate) = plt.subplots(1, 2, figsize=(9, 3.6))
    for tag in baselines:
        med_mse, med_rate = [], []
        for f in fractions:
            rows = [r for r in records if r.baseline == tag and r.budget_fraction == f]
            med_mse.append(np.median([r.salient_mse for r in rows]))
            med_rate.append(np.median([r.rate for r in rows]))
        style = _BASELINE_STYLE.get(tag, {})
        ax_mse.plot(fractions, med_mse, label=tag, **style)
        ax_rate.plot(fractions, med_rate, label=tag, **style)
    ax_mse.set_xlabel("budget fraction")
    ax_mse.set_ylabel("median salient MSE")
    ax_mse.set_title("fidelity vs budget")
    ax_mse.legend(fontsize=8)
    ax_rate.set_xlabel("budget fraction")
    ax_rate.set_ylabel("median communication rate")
    ax_rate.set_title("rate vs budget")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_prune_figure(curves: list[PruningCurve], path: str) -> str:
    """Retained L1 mass and normalized fused MSE along the pruning sweep,
    medians across scenes."""
    fractions = curves[0].fractions
    retained = np.median(np.stack([c.retained_l1_mass for c in curves]), axis=0)
    rel_mse = np.median(np.stack([c.fused_mse / c.signal_energy for c in curves]), axis=0)
    fig, (ax_mass, ax_mse) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax_mass.plot(fractions, retained, color="tab:blue", marker="o")
    ax_mass.set_xlabel("pruned fraction")
    ax_mass.set_ylabel("retained L1 mass")
    ax_mass.set_ylim(-0.02, 1.02)
    ax_mass.set_title("mass kept by L1 ranking")
    ax_mse.plot(fractions, rel_mse, color="tab:red", marker="o")
    ax_mse.set_xlabel("pruned fraction")
    ax_mse.set_ylabel("fused MSE / signal energy")
    ax_mse.set_title("damage from pruning")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
