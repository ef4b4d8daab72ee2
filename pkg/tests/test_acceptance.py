"""Acceptance gate: every criterion at its stated corpus size and tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion. The randomized corpora are seeded, so results are reproducible
bit for bit.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from featex.audit import random_message
from featex.config import BudgetConfig
from featex.coordinator import (AgentReport, allocate, compute_shares,
                                plan_round, refine_saliency, spatial_distribution)
from featex.core import FeatureMap, PatchGrid, LAPLACIAN_4, softmax
from featex.experiments import evaluate_scene, oracle_fused, run_scene
from featex.harness import AgentState, BandwidthLedger, communication_rate, run_round
from featex.metrics import pruning_experiment
from featex.params import build_params, refine_conv
from featex.routing import gate, recalibrate_agents, route
from featex.scenario import SceneConfig, generate_scene
from featex.sender import (PatchScoreTable, PatchStats, build_message,
                           classify_groups, ordering_violations, score_patches,
                           sort_channels)
from featex.wire import decode, encode

from conftest import brute_patch_scores


def report(num, name, detail=""):
    print(f"ACCEPT {num:02d} {name}: PASS {detail}")


# ---------------------------------------------------------------- corpus

@pytest.fixture(scope="module")
def scenario_corpus():
    """1,000 randomized coordination scenarios: N in [2,6] agents, C in
    [4,64], Q in [4,256], B in [0, N*Q*C]."""
    rng = np.random.default_rng(20240811)
    corpus = []
    for _ in range(1000):
        collaborators = int(rng.integers(1, 6))          # N = collaborators + ego
        patch = int(rng.choice([1, 2, 4]))
        rows = int(rng.integers(2, 17))
        cols = int(rng.integers(2, 17))
        channels = int(rng.integers(4, 65))
        h, w = rows * patch, cols * patch
        reports = []
        for aid in range(1, collaborators + 1):
            spatial = rng.uniform(0.0, 1.0, (h, w))
            saliency = np.abs(rng.normal(0.0, 1.0, (rows, cols)))
            saliency[rng.uniform(size=saliency.shape) < 0.25] = 0.0
            reports.append(AgentReport(aid, patch, spatial, saliency))
        budget = int(rng.integers(0, (collaborators + 1) * rows * cols * channels + 1))
        cfg = BudgetConfig(budget_blocks=budget, patch_size=patch,
                           seed=int(rng.integers(0, 2 ** 31)))
        corpus.append((reports, cfg, channels))
    return corpus


def test_c01_budget_invariant(scenario_corpus):
    start = time.time()
    for reports, cfg, channels in scenario_corpus:
        plan = plan_round(reports, cfg, channels)
        assert plan.total_granted <= cfg.budget_blocks
        if plan.grants.size:
            assert int(plan.grants.max()) <= channels
            assert int(plan.grants.min()) >= 0
    elapsed = time.time() - start
    assert elapsed < 60.0, f"budget corpus took {elapsed:.1f}s"
    report(1, "budget-invariant",
           f"(1000 scenarios, zero violations, {elapsed:.1f}s)")


def test_c02_apportionment_exactness(scenario_corpus):
    for reports, cfg, channels in scenario_corpus:
        grid = PatchGrid(reports[0].spatial.shape[0],
                         reports[0].spatial.shape[1], cfg.patch_size)
        sb = spatial_distribution([r.spatial for r in reports], grid,
                                  cfg.tau_s, cfg.budget_blocks)
        assert int(sb.patch_budgets.sum()) == cfg.budget_blocks
        refined = refine_saliency(reports, refine_conv(len(reports), cfg.seed))
        shares = compute_shares(refined, cfg.epsilon)
        grants, _ = allocate(shares, sb, channels)
        assert np.all(grants.sum(axis=0) <= sb.patch_budgets)
    report(2, "apportionment-exactness", "(1000 scenarios, integer-exact)")


def test_c03_laplacian_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        data = rng.normal(size=(16, 16, 8))
        for p in (1, 2, 4):
            got = score_patches(FeatureMap(data), PatchGrid(16, 16, p)).scores
            want = brute_patch_scores(data, LAPLACIAN_4, p)
            worst = max(worst, float(np.max(np.abs(got - want))))
    assert worst <= 1e-9
    report(3, "laplacian-oracle", f"(100 inputs x P in 1/2/4, max err {worst:.2e})")


def test_c04_softmax_and_share_normalization():
    rng = np.random.default_rng(4)
    for _ in range(300):
        v = rng.normal(0, 8, size=int(rng.integers(1, 80)))
        s = softmax(v, temperature=float(rng.uniform(0.1, 5.0)))
        assert abs(float(s.sum()) - 1.0) <= 1e-9
    worst = 0.0
    for _ in range(200):
        agents = int(rng.integers(1, 6))
        vals = np.abs(rng.normal(size=(agents, 6, 6)))
        vals[rng.uniform(size=vals.shape) < 0.3] = 0.0
        refined = refine_saliency(
            [AgentReport(j + 1, 1, np.zeros((6, 6)), vals[j]) for j in range(agents)],
            refine_conv(agents, int(rng.integers(1 << 30))))
        shares = compute_shares(refined)
        total = shares.shares.sum(axis=0)
        mass = refined.values.reshape(agents, -1).sum(axis=0)
        assert np.all(total <= 1.0 + 1e-12)
        massy = mass >= 1e-3
        if massy.any():
            worst = max(worst, float(np.max(np.abs(total[massy] - 1.0))))
    assert worst <= 1e-4
    report(4, "normalization", f"(softmax 1e-9, share gap {worst:.2e} <= 1e-4)")


def test_c05_priority_ordering():
    rng = np.random.default_rng(5)
    total_blocks = 0
    for i in range(1000):
        q = int(rng.integers(1, 17))
        c = int(rng.integers(2, 17))
        p = int(rng.choice([1, 2]))
        side = int(np.ceil(np.sqrt(q)))
        # synthesize a consistent patch geometry: q patches in one row
        grid = PatchGrid(p, q * p, p)
        scores = PatchScoreTable(np.abs(rng.normal(size=(q, c))), p)
        stats = PatchStats(np.abs(rng.normal(size=(q, c))),
                           np.abs(rng.normal(size=(q, c))))
        from featex.params import classifier_head
        style = "uniform" if i % 2 else "semantic"
        groups = classify_groups(scores, stats, classifier_head(i, style=style))
        weights = sort_channels(scores)
        x = FeatureMap(rng.normal(size=(p, q * p, c)))
        grants = rng.integers(0, c + 1, q)
        msg = build_message(x, grants, groups, weights, grid, 0, 1, 0)
        assert len(msg.blocks) == int(grants.sum())
        assert ordering_violations(msg, groups) == []
        total_blocks += len(msg.blocks)
        del side
    report(5, "priority-ordering", f"(1000 plans, {total_blocks} blocks, zero violations)")


def test_c06_wire_roundtrip():
    rng = np.random.default_rng(6)
    for _ in range(10000):
        msg = random_message(rng)
        raw = encode(msg)
        back = decode(raw)
        assert back == msg
        assert encode(back) == raw
    report(6, "wire-roundtrip", "(10000 messages, byte-exact)")


def test_c07_routing_contracts():
    rng = np.random.default_rng(7)
    params = build_params(7, 12, 4)
    data = rng.normal(size=(5, 12, 8, 8))
    gates = gate(data, params.gate)
    assert np.max(np.abs(gates.gates.sum(axis=1) - 1.0)) <= 1e-9

    from featex.routing import AssembledTensor
    x = AssembledTensor(data, np.ones((5, 12, 16), dtype=bool),
                        tuple(range(5)), 2)
    routed = route(x, params)
    assert routed.data.shape == data.shape

    base = recalibrate_agents(data, params.recal)
    perm = [0, 4, 2, 1, 3]
    permuted = recalibrate_agents(data[perm], params.recal)
    assert base[0].tobytes() == permuted[0].tobytes()
    assert np.array_equal(permuted[1:], base[perm][1:])

    single = rng.normal(size=(1, 12, 8, 8))
    assert np.max(np.abs(recalibrate_agents(single, params.recal) - single)) <= 1e-12
    report(7, "routing-contracts",
           "(gate sums, shape, permutation bit-exact, N=1 identity)")


def test_c08_determinism(tmp_path):
    from featex.cli import main
    import json
    scenario = tmp_path / "scene.json"
    scenario.write_text(json.dumps({"height": 8, "width": 8, "channels": 8,
                                    "agents": 3, "blobs": 3, "seed": 5,
                                    "seeds": [0, 1, 2]}))
    outs = []
    for name in ("a.jsonl", "b.jsonl"):
        out = tmp_path / name
        assert main(["run", "--scenario", str(scenario), "--budget", "0.1",
                     "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]

    scene = generate_scene(SceneConfig(height=8, width=8, channels=8,
                                       agents=3, blobs=3), 0)
    cfg = BudgetConfig(budget_blocks=30, seed=5)
    a = run_scene(scene, cfg, "coordinated")
    b = run_scene(scene, cfg, "coordinated")
    assert a.round_result.ledger.canonical() == b.round_result.ledger.canonical()
    assert a.fused.data.tobytes() == b.fused.data.tobytes()
    report(8, "determinism", "(records, ledgers, fused tensors byte-identical)")


def test_c09_channel_mechanism_benefit():
    start = time.time()
    scene_cfg = SceneConfig()
    cfg = BudgetConfig(budget_blocks=0, seed=7)
    params = build_params(cfg.seed, scene_cfg.channels, cfg.experts)
    n = 200
    wins_random = 0
    coord, spatial = [], []
    for seed in range(n):
        scene = generate_scene(scene_cfg, seed)
        recs = {r.baseline: r.salient_mse
                for r in evaluate_scene(scene, cfg, 0.05, params=params)}
        wins_random += recs["coordinated"] < recs["random"]
        coord.append(recs["coordinated"])
        spatial.append(recs["spatial_only"])
    elapsed = time.time() - start
    assert elapsed < 300.0, f"mechanism sweep took {elapsed:.0f}s"
    assert wins_random >= int(0.95 * n), f"only {wins_random}/{n} strict wins"
    assert float(np.median(coord)) < float(np.median(spatial))
    report(9, "channel-mechanism-benefit",
           f"({wins_random}/{n} strict wins vs random, median "
           f"{np.median(coord):.3f} < {np.median(spatial):.3f} vs spatial_only, "
           f"{elapsed:.0f}s)")


def test_c10_pruning_mechanism():
    scene_cfg = SceneConfig()  # half the channels marginal by construction
    assert scene_cfg.role_counts[2] * 2 >= scene_cfg.channels
    worst_ratio = 0.0
    for seed in range(60):
        scene = generate_scene(scene_cfg, seed)
        curve = pruning_experiment(scene, np.linspace(0.0, 1.0, 9))
        assert np.all(np.diff(curve.retained_l1_mass) <= 0.0)
        half = int(np.argmin(np.abs(curve.fractions - 0.5)))
        ratio = curve.fused_mse[half] / curve.signal_energy
        worst_ratio = max(worst_ratio, float(ratio))
    assert worst_ratio <= 0.01
    report(10, "pruning-mechanism",
           f"(60 scenes, worst half-prune MSE {100 * worst_ratio:.3f}% of energy)")


def test_c11_rate_accounting():
    h, w, c, collab = 16, 16, 32, 3
    ledger = BandwidthLedger(budget_blocks=0, block_bytes=4)
    for aid in range(1, collab + 1):
        ledger.record("payload", aid, 0, h * w * c * 4)
    full = communication_rate(ledger, (h, w, c), collab)
    assert abs(full - 16.0) <= 1e-9

    ledger2 = BandwidthLedger(budget_blocks=0, block_bytes=4)
    ledger2.record("payload", 1, 0, collab * h * w * c * 4 // 16)
    one = communication_rate(ledger2, (h, w, c), collab)
    assert abs(one - 1.0) <= 1e-9
    report(11, "rate-accounting", f"(full raw = {full}, reference = {one})")


def test_c12_budget_monotonicity():
    start = time.time()
    scene_cfg = SceneConfig()
    cfg = BudgetConfig(budget_blocks=0, seed=7)
    params = build_params(cfg.seed, scene_cfg.channels, cfg.experts)
    fractions = (0.01, 0.05, 0.20, 1.00)
    per_fraction = {f: [] for f in fractions}
    for seed in range(100):
        scene = generate_scene(scene_cfg, seed)
        oracle = oracle_fused(scene, cfg, params)
        for f in fractions:
            rec = evaluate_scene(scene, cfg, f, baselines=("coordinated",),
                                 params=params, oracle=oracle)[0]
            per_fraction[f].append(rec.salient_mse)
    medians = [float(np.median(per_fraction[f])) for f in fractions]
    assert all(a >= b for a, b in zip(medians, medians[1:])), medians
    report(12, "budget-monotonicity",
           f"(medians {['%.3f' % m for m in medians]}, {time.time() - start:.0f}s)")
