"""Randomized invariant audit: the protocol's hard guarantees, checked end to
end on adversarial inputs. The CLI exposes this as `featex audit`; tests reuse
the same checks with fault injection hooks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .config import BudgetConfig
from .coordinator import (AgentReport, AllocationPlan, allocate, compute_shares,
                          plan_round, refine_saliency, spatial_distribution)
from .core import FeatureMap, PatchGrid, softmax
from .experiments import run_scene
from .params import build_params, refine_conv
from .scenario import SceneConfig, generate_scene
from .sender import Sender, ordering_violations
from .wire import (MetadataMessage, PayloadBlock, PayloadMessage, PlanMessage,
                   decode, encode)

PlanMutator = Callable[[AllocationPlan], AllocationPlan]


@dataclass(frozen=True)
class AuditResult:
    name: str
    passed: bool
    detail: str = ""


def _random_reports(rng: np.random.Generator):
    """Adversarial metadata: arbitrary nonnegative saliency, arbitrary [0,1]
    spatial maps, random geometry within the protocol's envelope."""
    agents = int(rng.integers(1, 6))         # collaborators (ego excluded)
    patch = int(rng.choice([1, 2, 4]))
    rows = int(rng.integers(2, 17))
    cols = int(rng.integers(2, 17))
    channels = int(rng.integers(4, 65))
    h, w = rows * patch, cols * patch
    reports = []
    for aid in range(1, agents + 1):
        spatial = rng.uniform(0.0, 1.0, (h, w))
        saliency = np.abs(rng.normal(0.0, 1.0, (rows, cols)))
        saliency[rng.uniform(size=saliency.shape) < 0.2] = 0.0  # dead patches
        reports.append(AgentReport(aid, patch, spatial, saliency))
    budget = int(rng.integers(0, (agents + 1) * rows * cols * channels + 1))
    return reports, channels, budget, patch


def check_budget(rng: np.random.Generator, cases: int,
                 plan_mutator: Optional[PlanMutator] = None) -> AuditResult:
    for i in range(cases):
        reports, channels, budget, patch = _random_reports(rng)
        cfg = BudgetConfig(budget_blocks=budget, patch_size=patch,
                           seed=int(rng.integers(0, 2 ** 31)))
        plan = plan_round(reports, cfg, channels)
        if plan_mutator is not None:
            plan = plan_mutator(plan)
        if plan.total_granted > budget:
            return AuditResult("budget", False,
                               f"case {i}: granted {plan.total_granted} > budget {budget}")
        if plan.grants.size and plan.grants.max() > channels:
            return AuditResult("budget", False,
                               f"case {i}: grant above channel count {channels}")
    return AuditResult("budget", True, f"{cases} randomized scenarios")


def check_apportionment(rng: np.random.Generator, cases: int) -> AuditResult:
    for i in range(cases):
        reports, channels, budget, patch = _random_reports(rng)
        cfg = BudgetConfig(budget_blocks=budget, patch_size=patch,
                           seed=int(rng.integers(0, 2 ** 31)))
        grid = PatchGrid(reports[0].spatial.shape[0], reports[0].spatial.shape[1], patch)
        sb = spatial_distribution([r.spatial for r in reports], grid,
                                  cfg.tau_s, budget)
        if int(sb.patch_budgets.sum()) != budget:
            return AuditResult("apportionment", False,
                               f"case {i}: patch budgets sum {sb.patch_budgets.sum()} != {budget}")
        refined = refine_saliency(reports, refine_conv(len(reports), cfg.seed))
        shares = compute_shares(refined, cfg.epsilon)
        grants, _ = allocate(shares, sb, channels)
        per_patch = grants.sum(axis=0)
        if np.any(per_patch > sb.patch_budgets):
            k = int(np.argmax(per_patch - sb.patch_budgets))
            return AuditResult("apportionment", False,
                               f"case {i}: patch {k} spends {per_patch[k]} > {sb.patch_budgets[k]}")
    return AuditResult("apportionment", True, f"{cases} randomized scenarios")


def check_normalization(rng: np.random.Generator, cases: int) -> AuditResult:
    for i in range(cases):
        v = rng.normal(0.0, 5.0, int(rng.integers(1, 65)))
        s = softmax(v, temperature=float(rng.uniform(0.1, 10.0)))
        if abs(s.sum() - 1.0) > 1e-9 or s.min() <= 0:
            return AuditResult("normalization", False, f"case {i}: softmax sum {s.sum()}")
        reports, _, _, _ = _random_reports(rng)
        refined = refine_saliency(reports, refine_conv(len(reports), i))
        shares = compute_shares(refined)
        total = shares.shares.sum(axis=0)
        mass = refined.values.reshape(len(reports), -1).sum(axis=0)
        if np.any(total > 1.0 + 1e-12):
            return AuditResult("normalization", False, f"case {i}: share sum above 1")
        bad = (mass >= 1e-3) & (np.abs(total - 1.0) > 1e-4)
        if np.any(bad):
            return AuditResult("normalization", False,
                               f"case {i}: massy patch with share sum {total[bad][0]}")
    return AuditResult("normalization", True, f"{cases} randomized scenarios")


def check_ordering(rng: np.random.Generator, cases: int) -> AuditResult:
    for i in range(cases):
        channels = int(rng.integers(2, 17))
        patch = int(rng.choice([1, 2]))
        rows = int(rng.integers(2, 7))
        h = w = rows * patch
        grid = PatchGrid(h, w, patch)
        fmap = FeatureMap(rng.normal(0.0, 1.0, (h, w, channels)))
        params = build_params(int(rng.integers(0, 2 ** 31)), channels, 4)
        sender = Sender(1, params.spatial, params.classifier)
        bundle = sender.make_bundle(fmap, patch)
        grants = rng.integers(0, channels + 1, grid.num_patches)
        msg = sender.build_payload(fmap, bundle, grants, 0, 0)
        if len(msg.blocks) != int(grants.sum()):
            return AuditResult("ordering", False,
                               f"case {i}: {len(msg.blocks)} blocks != {grants.sum()} granted")
        problems = ordering_violations(msg, bundle.groups)
        if problems:
            return AuditResult("ordering", False, f"case {i}: {problems[0]}")
    return AuditResult("ordering", True, f"{cases} randomized plans")


def random_message(rng: np.random.Generator):
    """Arbitrary valid message of a random kind, for round-trip checks."""
    kind = rng.integers(0, 3)
    rid = int(rng.integers(0, 2 ** 32))
    snd = int(rng.integers(0, 2 ** 16))
    rcv = int(rng.integers(0, 2 ** 16))
    if kind == 0:
        patch = int(rng.choice([1, 2, 4]))
        rows, cols = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        h, w = rows * patch, cols * patch
        return MetadataMessage(rid, snd, rcv, h, w, patch,
                               rng.normal(size=(h, w)).astype(np.float32),
                               rng.normal(size=(rows, cols)).astype(np.float32))
    if kind == 1:
        a, q = int(rng.integers(1, 7)), int(rng.integers(1, 65))
        return PlanMessage(rid, snd, rcv, rng.integers(0, 2 ** 16, (a, q)))
    p2 = int(rng.choice([1, 4, 16]))
    blocks = tuple(PayloadBlock(int(rng.integers(0, 256)), int(rng.integers(0, 64)),
                                rng.normal(size=p2).astype(np.float32))
                   for _ in range(int(rng.integers(0, 17))))
    return PayloadMessage(rid, snd, rcv, blocks)


def check_roundtrip(rng: np.random.Generator, cases: int) -> AuditResult:
    for i in range(cases):
        msg = random_message(rng)
        back = decode(encode(msg))
        if back != msg:
            return AuditResult("roundtrip", False,
                               f"case {i}: {type(msg).__name__} did not survive the wire")
        if encode(back) != encode(msg):
            return AuditResult("roundtrip", False, f"case {i}: re-encode differs")
    return AuditResult("roundtrip", True, f"{cases} randomized messages")


def check_determinism(rng: np.random.Generator) -> AuditResult:
    seed = int(rng.integers(0, 2 ** 31))
    scene_cfg = SceneConfig(height=8, width=8, channels=8, agents=3, blobs=3)
    scene = generate_scene(scene_cfg, seed)
    cfg = BudgetConfig(budget_blocks=40, seed=seed)
    a = run_scene(scene, cfg, "coordinated")
    b = run_scene(scene, cfg, "coordinated")
    if a.round_result.ledger.canonical() != b.round_result.ledger.canonical():
        return AuditResult("determinism", False, "ledgers differ between runs")
    if a.fused.data.tobytes() != b.fused.data.tobytes():
        return AuditResult("determinism", False, "fused tensors differ between runs")
    return AuditResult("determinism", True, "run-twice comparison, bit level")


def run_audit(master_seed: int = 0, cases: int = 100,
              plan_mutator: Optional[PlanMutator] = None) -> list[AuditResult]:
    streams = np.random.SeedSequence(master_seed).spawn(6)
    rngs = [np.random.default_rng(s) for s in streams]
    return [
        check_budget(rngs[0], cases, plan_mutator),
        check_apportionment(rngs[1], cases),
        check_normalization(rngs[2], max(cases // 2, 1)),
        check_ordering(rngs[3], max(cases // 2, 1)),
        check_roundtrip(rngs[4], cases * 10),
        check_determinism(rngs[5]),
    ]
