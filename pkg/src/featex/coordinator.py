"""Receiver-side global coordination.

The ego agent gathers the collaborators' metadata, refines the channel
saliency maps, converts them into per-patch collaborative shares, distributes
the total block budget spatially, and rounds everything down to an integer
allocation matrix that can never overspend. Rounding uses floor plus
largest-remainder at both levels (patches, then agents), which keeps the
budget constraint exact; surplus that cannot be spent (dead patches, channel
caps) is dropped and recorded, never recycled.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import BudgetConfig
from .core import Kernel2D, PatchGrid, conv2d, gaussian_smooth, softmax
from .errors import StructuralError
from .params import refine_conv
from .wire import BROADCAST, MetadataMessage, PlanMessage


@dataclass(frozen=True)
class AgentReport:
    """Transmitted part of one collaborator's importance bundle."""

    agent_id: int
    patch_size: int
    spatial: np.ndarray   # (H, W)
    saliency: np.ndarray  # (rows, cols)

    @classmethod
    def from_metadata(cls, msg: MetadataMessage) -> "AgentReport":
        return cls(msg.sender_id, msg.patch_size,
                   np.asarray(msg.spatial, dtype=np.float64),
                   np.asarray(msg.saliency, dtype=np.float64))


@dataclass(frozen=True)
class RefinedSaliency:
    agent_ids: tuple[int, ...]
    values: np.ndarray  # (A, rows, cols), clamped >= 0


@dataclass(frozen=True)
class ShareMatrix:
    agent_ids: tuple[int, ...]
    shares: np.ndarray  # (A, Q), each column sums to <= 1


@dataclass(frozen=True)
class SpatialBudget:
    global_map: np.ndarray     # (Q,) patch-pooled max of spatial maps
    probs: np.ndarray          # (Q,) softmax(global / tau), sums to 1
    tau_s: float
    patch_budgets: np.ndarray  # (Q,) ints, sums to total exactly
    total: int


@dataclass(frozen=True)
class AllocationPlan:
    """Integer grant matrix broadcast to collaborators.

    Rows follow agent_ids order (sorted ascending); each collaborator locates
    its row by the rank of its id.
    """

    agent_ids: tuple[int, ...]
    grants: np.ndarray  # (A, Q) int64
    round_id: int
    budget: int
    residual_trace: tuple[tuple[str, int, int], ...] = ()

    @property
    def total_granted(self) -> int:
        return int(self.grants.sum()) if self.grants.size else 0

    def row_for(self, agent_id: int) -> np.ndarray:
        return self.grants[self.agent_ids.index(agent_id)]

    def to_message(self, sender_id: int, receiver_id: int = BROADCAST) -> PlanMessage:
        return PlanMessage(self.round_id, sender_id, receiver_id, self.grants)


def largest_remainder(reals: np.ndarray, total: int,
                      require_positive_remainder: bool = False) -> tuple[np.ndarray, int]:
    """Floor each entry, then hand the leftover units to the largest
    fractional remainders (ties to the lower index), one unit each.

    With require_positive_remainder, entries whose remainder is zero get
    nothing; the function then returns how many units could not be placed.
    """
    x = np.asarray(reals, dtype=np.float64)
    floors = np.floor(x).astype(np.int64)
    leftover = int(total) - int(floors.sum())
    if leftover <= 0:
        return floors, 0
    rem = x - floors
    order = np.lexsort((np.arange(x.size), -rem))  # remainder desc, index asc
    out = floors.copy()
    placed = 0
    for idx in order:
        if placed == leftover:
            break
        if require_positive_remainder and rem[idx] <= 0.0:
            continue
        out[idx] += 1
        placed += 1
    return out, leftover - placed


def refine_saliency(reports: list[AgentReport], weights: np.ndarray) -> RefinedSaliency:
    """Mix all agents' saliency maps with a 3x3 conv, smooth, clamp at zero."""
    if not reports:
        raise StructuralError("refine_saliency needs at least one report")
    shape = reports[0].saliency.shape
    for r in reports:
        if r.saliency.shape != shape:
            raise StructuralError(
                f"saliency shape mismatch: {r.saliency.shape} vs {shape}")
    agents = len(reports)
    if weights.shape != (agents, agents, 3, 3):
        raise StructuralError(
            f"refine kernel {weights.shape} does not fit {agents} agents")
    stack = np.stack([r.saliency for r in reports])
    out = np.empty_like(stack)
    for j in range(agents):
        acc = np.zeros(shape)
        for l in range(agents):
            acc += conv2d(stack[l], Kernel2D(weights[j, l]))
        out[j] = np.maximum(gaussian_smooth(acc), 0.0)
    return RefinedSaliency(tuple(r.agent_id for r in reports), out)


def compute_shares(refined: RefinedSaliency, epsilon: float = 1e-6) -> ShareMatrix:
    """Collaborative share: each agent's refined saliency over the patch total."""
    flat = refined.values.reshape(refined.values.shape[0], -1)
    total = flat.sum(axis=0)
    return ShareMatrix(refined.agent_ids, flat / (total + epsilon))


def spatial_distribution(spatial_maps: list[np.ndarray], grid: PatchGrid,
                         tau_s: float, total: int) -> SpatialBudget:
    """Element-wise max of spatial maps, patch-max pooled, softmax-tempered,
    then apportioned to integers summing to the budget exactly."""
    if not spatial_maps:
        raise StructuralError("spatial_distribution needs at least one map")
    if total < 0:
        raise StructuralError(f"budget must be >= 0, got {total}")
    global_map = np.maximum.reduce([np.asarray(m, dtype=np.float64)
                                    for m in spatial_maps])
    pooled = grid.pool_max(global_map).ravel()
    probs = softmax(pooled, temperature=tau_s)
    patch_budgets, unplaced = largest_remainder(total * probs, total)
    assert unplaced == 0, "softmax masses always admit exact apportionment"
    return SpatialBudget(pooled, probs, tau_s, patch_budgets, int(total))


def allocate(shares: ShareMatrix, budget: SpatialBudget,
             channels: int) -> tuple[np.ndarray, tuple[tuple[str, int, int], ...]]:
    """Turn per-patch budgets and shares into integer grants.

    Per patch: floor + largest remainder over agents (agents with zero
    remainder get no extras, so dead patches spend nothing), then cap each
    grant at the channel count and refill other agents by remainder order.
    Whatever remains unspendable is dropped and recorded.
    """
    agents, q = shares.shares.shape
    if budget.patch_budgets.shape != (q,):
        raise StructuralError("share matrix and spatial budget are misaligned")
    grants = np.zeros((agents, q), dtype=np.int64)
    trace = []
    for k in range(q):
        t = int(budget.patch_budgets[k])
        if t == 0:
            continue
        reals = t * shares.shares[:, k]
        row, unplaced = largest_remainder(reals, t, require_positive_remainder=True)
        if unplaced:
            trace.append(("unshared", k, int(unplaced)))
        over = np.maximum(row - channels, 0)
        surplus = int(over.sum())
        if surplus:
            row = np.minimum(row, channels)
            rem = reals - np.floor(reals)
            order = np.lexsort((np.arange(agents), -rem))
            for idx in order:
                if surplus == 0:
                    break
                room = channels - int(row[idx])
                if room <= 0:
                    continue
                give = min(room, surplus)
                row[idx] += give
                surplus -= give
            if surplus:
                trace.append(("cap", k, surplus))
        grants[:, k] = row
    return grants, tuple(trace)


def plan_round(reports: list[AgentReport], config: BudgetConfig, channels: int,
               round_id: int = 0, share_mode: str = "saliency") -> AllocationPlan:
    """Full coordination pass: refine, share, distribute, allocate.

    share_mode "uniform" keeps the spatial budgeting but splits every patch
    evenly across agents (the channel mechanism disabled, for baselines).
    """
    if not reports:
        return AllocationPlan((), np.zeros((0, 0), dtype=np.int64), round_id,
                              config.budget_blocks)
    reports = sorted(reports, key=lambda r: r.agent_id)
    first = reports[0]
    h, w = first.spatial.shape
    for r in reports:
        if r.spatial.shape != (h, w) or r.patch_size != first.patch_size:
            raise StructuralError("collaborator reports disagree on geometry")
    grid = PatchGrid(h, w, first.patch_size)
    agents = len(reports)

    refined = refine_saliency(reports, refine_conv(agents, config.seed))
    if share_mode == "saliency":
        shares = compute_shares(refined, config.epsilon)
    elif share_mode == "uniform":
        shares = ShareMatrix(refined.agent_ids,
                             np.full((agents, grid.num_patches), 1.0 / agents))
    else:
        raise StructuralError(f"unknown share mode {share_mode!r}")

    budget = spatial_distribution([r.spatial for r in reports], grid,
                                  config.tau_s, config.budget_blocks)
    grants, trace = allocate(shares, budget, channels)
    return AllocationPlan(tuple(r.agent_id for r in reports), grants, round_id,
                          config.budget_blocks, trace)
