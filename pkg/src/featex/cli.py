"""Command-line entry point.

Subcommands: run (one simulation per seed), sweep (budget fractions x seeds x
baselines), prune (channel pruning analysis), audit (randomized invariant
suite). Results are line-delimited JSON records, one complete record per
line; sweep and prune also render figures next to the output file.

Exit codes: 0 success, 1 usage error, 2 invariant violation, 3 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from .audit import run_audit
from .config import BudgetConfig
from .errors import StructuralError
from .experiments import (BASELINES, RunRecord, evaluate_scene, full_budget,
                          oracle_fused, sweep)
from .metrics import pruning_experiment
from .params import build_params
from .scenario import SceneConfig, generate_scene

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVARIANT = 2
EXIT_IO = 3

DEFAULT_FRACTIONS = (0.01, 0.05, 0.2, 1.0)
DEFAULT_PRUNE_FRACTIONS = (0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0)

_SCENE_KEYS = {"height", "width", "channels", "agents", "blobs", "blob_sigma",
               "role_counts"}
_CONFIG_KEYS = {"patch_size", "experts", "tau_s", "seed", "frames"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; the contract says 1
        raise UsageError(message)


def _parse_budget(text: str) -> tuple[str, float]:
    """Plain number = fraction of full exchange; 'Nb' = absolute blocks."""
    text = text.strip().lower()
    try:
        if text.endswith("b"):
            blocks = int(text[:-1])
            if blocks < 0:
                raise ValueError
            return ("blocks", float(blocks))
        frac = float(text)
        if not 0.0 <= frac <= 1.0:
            raise ValueError
        return ("fraction", frac)
    except ValueError:
        raise UsageError(
            f"budget {text!r} is neither a fraction in [0, 1] nor '<blocks>b'")


def _load_scenario(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IOError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"scenario {path} must hold a JSON object")
    return raw


def _build_configs(scenario: dict, args) -> tuple[SceneConfig, BudgetConfig, dict]:
    unknown = set(scenario) - _SCENE_KEYS - _CONFIG_KEYS - {"name", "seeds",
                                                            "budget", "frames"}
    if unknown:
        raise UsageError(f"unknown scenario keys: {sorted(unknown)}")
    scene_kwargs = {k: scenario[k] for k in _SCENE_KEYS if k in scenario}
    if "blob_sigma" in scene_kwargs:
        scene_kwargs["blob_sigma"] = tuple(scene_kwargs["blob_sigma"])
    if "role_counts" in scene_kwargs:
        scene_kwargs["role_counts"] = tuple(scene_kwargs["role_counts"])
    try:
        scene_cfg = SceneConfig(**scene_kwargs)
        config = BudgetConfig(
            budget_blocks=0,
            patch_size=args.patch_size if args.patch_size is not None
            else scenario.get("patch_size", 1),
            experts=args.experts if args.experts is not None
            else scenario.get("experts", 4),
            tau_s=args.tau_s if args.tau_s is not None
            else scenario.get("tau_s", 1.0),
            seed=scenario.get("seed", 0),
            rounds=scenario.get("frames", 1),
        )
    except (StructuralError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    return scene_cfg, config, scenario


def _resolve_seeds(args, scenario: dict) -> list[int]:
    if args.seed:
        return [int(s) for s in args.seed]
    if "seeds" in scenario:
        seeds = scenario["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise UsageError("scenario 'seeds' must be a non-empty list")
        return [int(s) for s in seeds]
    env = os.environ.get("FEATEX_SEED")
    if env is not None:
        return [int(env)]
    return [0]


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


class RecordWriter:
    """Append-only JSONL sink; each record lands as one complete line."""

    def __init__(self, path: str | None):
        self.path = path
        self._fh = None
        if path is not None:
            try:
                self._fh = open(path, "w", encoding="utf-8")
            except OSError as exc:
                raise IOError(f"cannot open output {path}: {exc}") from exc

    def write(self, record: dict):
        line = json.dumps(record, sort_keys=True)
        if self._fh is not None:
            self._fh.write(line + "\n")
            self._fh.flush()
        else:
            print(line)

    def close(self):
        if self._fh is not None:
            self._fh.close()


def _record_dict(rec: RunRecord, chash: str, name: str) -> dict:
    body = asdict(rec)
    body["config_hash"] = chash
    body["scenario"] = name
    body["audit"] = "pass" if rec.audit_ok else "fail"
    del body["audit_ok"]
    return body


def _fraction_of(budget_kind: str, budget_value: float, scene_cfg: SceneConfig,
                 config: BudgetConfig) -> float:
    if budget_kind == "fraction":
        return budget_value
    total = full_budget(scene_cfg, config.patch_size)
    return min(budget_value / total, 1.0) if total else 0.0


def cmd_run(args) -> int:
    scenario = _load_scenario(args.scenario)
    scene_cfg, config, raw = _build_configs(scenario, args)
    seeds = _resolve_seeds(args, raw)
    kind, value = _parse_budget(args.budget)
    fraction = _fraction_of(kind, value, scene_cfg, config)
    baseline = args.baseline
    if baseline not in BASELINES:
        raise UsageError(f"baseline must be one of {BASELINES}")
    chash = _config_hash({"scenario": raw, "budget": args.budget,
                          "baseline": baseline, "seeds": seeds,
                          "patch_size": config.patch_size,
                          "experts": config.experts, "tau_s": config.tau_s})
    params = build_params(config.seed, scene_cfg.channels, config.experts)

    writer = RecordWriter(args.out)
    try:
        for seed in seeds:
            frame_records = []
            for frame in range(config.rounds):
                scene = generate_scene(scene_cfg, seed + frame)
                frame_records.extend(evaluate_scene(
                    scene, config, fraction, baselines=(baseline,), params=params))
            agg = frame_records[0]
            if len(frame_records) > 1:
                agg = replace(
                    agg,
                    rate=float(np.mean([r.rate for r in frame_records])),
                    salient_mse=float(np.mean([r.salient_mse for r in frame_records])),
                    global_mse=float(np.mean([r.global_mse for r in frame_records])),
                    granted_blocks=sum(r.granted_blocks for r in frame_records),
                    audit_ok=all(r.audit_ok for r in frame_records),
                )
            writer.write(_record_dict(agg, chash, raw.get("name", "default")))
    finally:
        writer.close()
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _load_scenario(args.scenario)
    scene_cfg, config, raw = _build_configs(scenario, args)
    seeds = _resolve_seeds(args, raw)
    budgets = args.budget or [str(f) for f in DEFAULT_FRACTIONS]
    if len(budgets) < 2:
        raise UsageError("sweep needs at least two --budget values")
    fractions = sorted(_fraction_of(*_parse_budget(b), scene_cfg, config)
                       for b in budgets)
    chash = _config_hash({"scenario": raw, "budgets": budgets, "seeds": seeds,
                          "patch_size": config.patch_size,
                          "experts": config.experts, "tau_s": config.tau_s})

    records = sweep(scene_cfg, config, seeds, fractions)
    writer = RecordWriter(args.out)
    try:
        for rec in records:
            writer.write(_record_dict(rec, chash, raw.get("name", "default")))
    finally:
        writer.close()

    if args.out and not args.no_figures:
        from .plots import save_sweep_figure
        stem = os.path.splitext(args.out)[0]
        print(f"figure: {save_sweep_figure(records, stem + '_fidelity.png')}",
              file=sys.stderr)
    return EXIT_OK


def cmd_prune(args) -> int:
    scenario = _load_scenario(args.scenario)
    scene_cfg, config, raw = _build_configs(scenario, args)
    seeds = _resolve_seeds(args, raw)
    fractions = ([float(f) for f in args.fractions] if args.fractions
                 else list(DEFAULT_PRUNE_FRACTIONS))
    if any(not 0 <= f <= 1 for f in fractions):
        raise UsageError("prune fractions must lie in [0, 1]")
    chash = _config_hash({"scenario": raw, "fractions": fractions, "seeds": seeds})

    curves = []
    writer = RecordWriter(args.out)
    try:
        for seed in sorted(seeds):
            scene = generate_scene(scene_cfg, seed)
            curve = pruning_experiment(scene, fractions)
            curves.append(curve)
            for i, frac in enumerate(curve.fractions):
                writer.write({
                    "config_hash": chash,
                    "scenario": raw.get("name", "default"),
                    "scene_seed": seed,
                    "prune_fraction": float(frac),
                    "retained_l1_mass": float(curve.retained_l1_mass[i]),
                    "fused_mse": float(curve.fused_mse[i]),
                    "signal_energy": float(curve.signal_energy),
                })
    finally:
        writer.close()

    if args.out and not args.no_figures:
        from .plots import save_prune_figure
        stem = os.path.splitext(args.out)[0]
        print(f"figure: {save_prune_figure(curves, stem + '_prune.png')}",
              file=sys.stderr)
    return EXIT_OK


def cmd_audit(args) -> int:
    results = run_audit(master_seed=args.master_seed, cases=args.cases)
    failed = [r for r in results if not r.passed]
    for r in results:
        state = "PASS" if r.passed else "FAIL"
        print(f"{state} {r.name}: {r.detail}")
    if failed:
        print("violated invariants: " + ", ".join(r.name for r in failed),
              file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="featex",
                     description="bandwidth-aware multi-agent feature exchange")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", help="scenario config JSON")
        p.add_argument("--seed", action="append",
                       help="scene seed (repeatable; overrides scenario/env)")
        p.add_argument("--patch-size", type=int, default=None)
        p.add_argument("--experts", type=int, default=None)
        p.add_argument("--tau-s", type=float, default=None, dest="tau_s")
        p.add_argument("--out", help="output JSONL path (default: stdout)")

    p_run = sub.add_parser("run", help="one protocol round per frame per seed")
    common(p_run)
    p_run.add_argument("--budget", default="0.05",
                       help="fraction in [0,1] or '<blocks>b'")
    p_run.add_argument("--baseline", default="coordinated", choices=BASELINES)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="budget sweep across baselines")
    common(p_sweep)
    p_sweep.add_argument("--budget", action="append",
                         help="budget value (repeat >= 2 times)")
    p_sweep.add_argument("--no-figures", action="store_true")
    p_sweep.set_defaults(func=cmd_sweep)

    p_prune = sub.add_parser("prune", help="channel pruning experiment")
    common(p_prune)
    p_prune.add_argument("--fractions", nargs="*",
                         help="prune fractions in [0, 1]")
    p_prune.add_argument("--no-figures", action="store_true")
    p_prune.set_defaults(func=cmd_prune)

    p_audit = sub.add_parser("audit", help="randomized invariant suite")
    p_audit.add_argument("--cases", type=int, default=100)
    p_audit.add_argument("--master-seed", type=int, default=0)
    p_audit.set_defaults(func=cmd_audit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IOError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StructuralError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
