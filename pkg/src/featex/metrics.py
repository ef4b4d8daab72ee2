"""Reference fusion, fidelity against the full-exchange oracle, the channel
pruning analysis, and the random-allocation baseline.

Fidelity is the quality proxy: a masked MSE between the fused map under a
budget and the fused map under unlimited exchange, measured where it matters
(object pixels, primary channels) and globally.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import BudgetConfig
from .coordinator import AllocationPlan
from .core import FeatureMap, l1_norm_per_channel
from .errors import StructuralError
from .routing import RoutedTensor
from .scenario import SyntheticScene


@dataclass(frozen=True)
class FidelityReport:
    salient_mse: float  # on object-mask pixels, primary channels only
    global_mse: float   # over every pixel and channel
    rate: float
    baseline_tag: str


@dataclass(frozen=True)
class PruningCurve:
    ranking: np.ndarray          # channels by fused L1, weakest first
    fractions: np.ndarray
    retained_l1_mass: np.ndarray
    fused_mse: np.ndarray
    signal_energy: float         # mean square of the unpruned fused map


def _sorted_sum(arr: np.ndarray, axis: int) -> np.ndarray:
    return np.sort(arr, axis=axis).sum(axis=axis)


def reference_fuse(routed: RoutedTensor) -> FeatureMap:
    """Mean over contributing agents per position.

    A position contributes only where its block was received and its value is
    nonzero; zero-padded content is indistinguishable from padding and stays
    out of the mean. Positions nobody contributes to fall back to the ego row.
    """
    data = routed.data
    n, c, h, w = data.shape
    p = routed.patch_size
    rows, cols = h // p, w // p
    presence = routed.presence.reshape(n, c, rows, cols)
    presence = np.repeat(np.repeat(presence, p, axis=2), p, axis=3)
    contrib = presence & (data != 0.0)
    counts = contrib.sum(axis=0)
    values = np.where(contrib, data, 0.0)
    total = _sorted_sum(values, axis=0)
    fused = np.where(counts > 0, total / np.maximum(counts, 1), data[0])
    return FeatureMap(np.moveaxis(fused, 0, 2))


def fidelity(scene: SyntheticScene, fused: FeatureMap, oracle: FeatureMap,
             rate: float = 0.0, baseline_tag: str = "coordinated") -> FidelityReport:
    if fused.data.shape != oracle.data.shape:
        raise StructuralError("fused and oracle maps disagree on shape")
    diff = fused.data - oracle.data
    global_mse = float(np.mean(diff ** 2))
    mask = scene.object_mask
    primary = scene.primary_channels
    if mask.any() and primary.size:
        salient = float(np.mean(diff[mask][:, primary] ** 2))
    else:
        salient = 0.0
    return FidelityReport(salient, global_mse, float(rate), baseline_tag)


def full_exchange_fuse(scene: SyntheticScene) -> FeatureMap:
    """Reference fusion of the complete, unbudgeted stack of agent maps."""
    data = np.stack([np.moveaxis(m.data, 2, 0) for m in scene.agent_maps])
    n, c, h, w = data.shape
    presence = np.ones((n, c, h * w), dtype=bool)
    routed = RoutedTensor(data, presence, tuple(range(n)), 1)
    return reference_fuse(routed)


def pruning_experiment(scene: SyntheticScene, prune_fractions) -> PruningCurve:
    """Rank channels of the full-exchange fused map by L1 norm, zero the
    weakest fraction, and measure what survives."""
    fractions = np.sort(np.asarray(list(prune_fractions), dtype=np.float64))
    if fractions.size and (fractions.min() < 0 or fractions.max() > 1):
        raise StructuralError("prune fractions must lie in [0, 1]")
    fused = full_exchange_fuse(scene)
    l1 = l1_norm_per_channel(fused)
    ranking = np.argsort(l1, kind="stable")  # weakest first, ties by index
    total_mass = float(l1.sum())
    energy = float(np.mean(fused.data ** 2))

    c = fused.channels
    retained = np.empty_like(fractions)
    mse = np.empty_like(fractions)
    for i, frac in enumerate(fractions):
        drop = int(np.floor(frac * c))
        dropped = ranking[:drop]
        kept_mass = total_mass - float(l1[dropped].sum())
        retained[i] = kept_mass / total_mass if total_mass > 0 else (0.0 if drop else 1.0)
        pruned = fused.data.copy()
        pruned[:, :, dropped] = 0.0
        mse[i] = float(np.mean((pruned - fused.data) ** 2))
    return PruningCurve(ranking, fractions, retained, mse, energy)


def baseline_random_allocation(agent_ids, num_patches: int, channels: int,
                               config: BudgetConfig, seed: int,
                               round_id: int = 0) -> AllocationPlan:
    """Spend the same budget on uniformly random (agent, patch, channel)
    triples without replacement; the budget invariant still holds exactly."""
    agent_ids = tuple(sorted(agent_ids))
    a = len(agent_ids)
    grants = np.zeros((a, num_patches), dtype=np.int64)
    universe = a * num_patches * channels
    take = min(config.budget_blocks, universe)
    if a and take:
        rng = np.random.default_rng(seed)
        picks = rng.choice(universe, size=take, replace=False)
        flat_jk = picks // channels  # collapse the channel coordinate
        np.add.at(grants, (flat_jk // num_patches, flat_jk % num_patches), 1)
    return AllocationPlan(agent_ids, grants, round_id, config.budget_blocks)
