"""Scene-to-record pipelines shared by the CLI, audits, and acceptance tests.

A single evaluation runs the full protocol (metadata, plan, payload, wire
encoding, assembly), routes the assembled tensor, fuses it, and scores the
result against the full-exchange oracle of the same scene under the same
heads. Baselines swap only the planner: coordinated (the real mechanism),
spatial_only (same spatial budgeting, uniform shares), and random.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import BudgetConfig
from .coordinator import plan_round
from .core import FeatureMap, PatchGrid
from .errors import StructuralError
from .harness import AgentState, RoundResult, communication_rate, run_round
from .metrics import FidelityReport, baseline_random_allocation, fidelity, reference_fuse
from .params import ProtocolParams, build_params
from .routing import route
from .scenario import SceneConfig, SyntheticScene, generate_scene

BASELINES = ("coordinated", "random", "spatial_only")


@dataclass(frozen=True)
class RunRecord:
    baseline: str
    budget_fraction: float
    scene_seed: int
    rate: float
    salient_mse: float
    global_mse: float
    budget_blocks: int
    granted_blocks: int
    audit_ok: bool


@dataclass(frozen=True)
class SceneRun:
    fused: FeatureMap
    rate: float
    round_result: RoundResult


def full_budget(scene_cfg: SceneConfig, patch_size: int) -> int:
    """Every block from every collaborator: (N-1) * Q * C."""
    grid = PatchGrid(scene_cfg.height, scene_cfg.width, patch_size)
    return (scene_cfg.agents - 1) * grid.num_patches * scene_cfg.channels


def full_exchange_planner(reports, cfg, channels, round_id):
    """Grant every block of every collaborator; used to build the oracle."""
    ids = tuple(sorted(r.agent_id for r in reports))
    if not ids:
        return plan_round(reports, cfg, channels, round_id)
    grid = PatchGrid(reports[0].spatial.shape[0], reports[0].spatial.shape[1],
                     reports[0].patch_size)
    grants = np.full((len(ids), grid.num_patches), channels, dtype=np.int64)
    from .coordinator import AllocationPlan
    return AllocationPlan(ids, grants, round_id, cfg.budget_blocks)


def _planner_for(baseline: str, scene: SyntheticScene, config: BudgetConfig):
    if baseline == "coordinated":
        return plan_round
    if baseline == "full":
        return full_exchange_planner
    if baseline == "spatial_only":
        return lambda reports, cfg, channels, round_id: plan_round(
            reports, cfg, channels, round_id, share_mode="uniform")
    if baseline == "random":
        grid = PatchGrid(scene.config.height, scene.config.width, config.patch_size)

        def planner(reports, cfg, channels, round_id):
            ids = [r.agent_id for r in reports]
            return baseline_random_allocation(
                ids, grid.num_patches, channels, cfg,
                seed=[cfg.seed, scene.seed, round_id], round_id=round_id)

        return planner
    raise StructuralError(f"unknown baseline {baseline!r}")


def run_scene(scene: SyntheticScene, config: BudgetConfig, baseline: str,
              params: ProtocolParams | None = None, round_id: int = 0) -> SceneRun:
    """One protocol cycle on a scene: round, routing, fusion, rate."""
    if params is None:
        params = build_params(config.seed, scene.config.channels, config.experts)
    agents = [AgentState(i, fmap) for i, fmap in enumerate(scene.agent_maps)]
    result = run_round(agents, 0, config, params=params,
                       planner=_planner_for(baseline, scene, config),
                       round_id=round_id)
    fused = reference_fuse(route(result.assembled, params))
    shape = (scene.config.height, scene.config.width, scene.config.channels)
    collaborators = scene.config.agents - 1
    rate = (communication_rate(result.ledger, shape, collaborators, round_id)
            if collaborators else 0.0)
    return SceneRun(fused, rate, result)


def oracle_fused(scene: SyntheticScene, config: BudgetConfig,
                 params: ProtocolParams | None = None) -> FeatureMap:
    """Full-exchange fusion through the very same pipeline and heads."""
    full = replace(config, budget_blocks=full_budget(scene.config, config.patch_size))
    return run_scene(scene, full, "full", params).fused


def evaluate_scene(scene: SyntheticScene, config: BudgetConfig, fraction: float,
                   baselines=BASELINES, params: ProtocolParams | None = None,
                   oracle: FeatureMap | None = None) -> list[RunRecord]:
    if params is None:
        params = build_params(config.seed, scene.config.channels, config.experts)
    if oracle is None:
        oracle = oracle_fused(scene, config, params)
    total = full_budget(scene.config, config.patch_size)
    blocks = int(round(fraction * total))
    cfg = replace(config, budget_blocks=blocks)
    records = []
    for baseline in baselines:
        run = run_scene(scene, cfg, baseline, params)
        report: FidelityReport = fidelity(scene, run.fused, oracle, run.rate, baseline)
        plan = run.round_result.plan
        records.append(RunRecord(
            baseline=baseline,
            budget_fraction=float(fraction),
            scene_seed=scene.seed,
            rate=report.rate,
            salient_mse=report.salient_mse,
            global_mse=report.global_mse,
            budget_blocks=blocks,
            granted_blocks=plan.total_granted,
            audit_ok=plan.total_granted <= blocks,
        ))
    return records


def sweep(scene_cfg: SceneConfig, config: BudgetConfig, seeds, fractions,
          baselines=BASELINES) -> list[RunRecord]:
    """Deterministic cross product, ordered by fraction, then seed, then
    baseline."""
    params = build_params(config.seed, scene_cfg.channels, config.experts)
    records = []
    oracles = {}
    for seed in sorted(seeds):
        scene = generate_scene(scene_cfg, seed)
        oracles[seed] = (scene, oracle_fused(scene, config, params))
    for fraction in sorted(fractions):
        for seed in sorted(seeds):
            scene, oracle = oracles[seed]
            records.extend(evaluate_scene(scene, config, fraction,
                                          baselines, params, oracle))
    return records


def median_by(records: list[RunRecord], baseline: str, fraction: float) -> float:
    vals = [r.salient_mse for r in records
            if r.baseline == baseline and r.budget_fraction == fraction]
    if not vals:
        raise StructuralError(f"no records for {baseline} at {fraction}")
    return float(np.median(vals))
