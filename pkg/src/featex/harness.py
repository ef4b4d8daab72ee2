"""Multi-agent round driver with exact bandwidth accounting.

One protocol cycle per round: every collaborator ships metadata to the ego
agent, the ego broadcasts an allocation plan, collaborators answer with
priority-ordered payloads, and the ego assembles the zero-padded tensor.
Every message crosses the real wire encoding, and the ledger records the
exact byte counts. Collaborators whose plan row is empty stay silent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import BudgetConfig
from .coordinator import AgentReport, AllocationPlan, plan_round
from .core import FeatureMap, PatchGrid
from .errors import ProtocolError, StructuralError
from .params import ProtocolParams, build_params
from .routing import AssembledTensor, assemble
from .sender import ImportanceBundle, Sender
from .wire import decode, encode

Planner = Callable[[list[AgentReport], BudgetConfig, int, int], AllocationPlan]

RAW_COMPRESSION = 16.0  # reference: full feature exchange at 16x compression = rate 1.0


@dataclass(frozen=True)
class AgentState:
    """One agent in a scenario. Pose is carried for realism, never used to
    warp features; all agents are assumed pre-aligned to a common grid."""

    agent_id: int
    features: FeatureMap
    pose: tuple[float, float, float] = (0.0, 0.0, 0.0)  # x, y, heading


@dataclass
class BandwidthLedger:
    """Per (agent, round) byte and block accounting."""

    budget_blocks: int
    block_bytes: int  # 4 * P^2 payload bytes per channel block
    entries: dict = field(default_factory=dict)

    def _slot(self, agent_id: int, round_id: int) -> dict:
        key = (int(agent_id), int(round_id))
        if key not in self.entries:
            self.entries[key] = {"bytes_metadata": 0, "bytes_plan": 0,
                                 "bytes_payload": 0, "payload_blocks": 0}
        return self.entries[key]

    def record(self, kind: str, agent_id: int, round_id: int, nbytes: int,
               blocks: int = 0):
        slot = self._slot(agent_id, round_id)
        slot[f"bytes_{kind}"] += int(nbytes)
        if kind == "payload":
            slot["payload_blocks"] += int(blocks)

    def round_bytes(self, round_id: int) -> int:
        return sum(v["bytes_metadata"] + v["bytes_plan"] + v["bytes_payload"]
                   for (a, r), v in self.entries.items() if r == round_id)

    def payload_blocks(self, agent_id: int, round_id: int) -> int:
        return self.entries.get((agent_id, round_id), {}).get("payload_blocks", 0)

    def audit_against(self, plan: AllocationPlan, round_id: int) -> list[str]:
        """Received blocks must equal the plan row per agent, total <= budget."""
        problems = []
        for i, aid in enumerate(plan.agent_ids):
            want = int(plan.grants[i].sum())
            got = self.payload_blocks(aid, round_id)
            if want != got:
                problems.append(f"agent {aid}: plan grants {want}, received {got}")
        if plan.total_granted > self.budget_blocks:
            problems.append(
                f"plan grants {plan.total_granted} > budget {self.budget_blocks}")
        return problems

    def canonical(self) -> str:
        """Stable serialization for byte-level determinism comparisons."""
        payload = {f"{a}:{r}": dict(sorted(v.items()))
                   for (a, r), v in sorted(self.entries.items())}
        return json.dumps({"budget": self.budget_blocks,
                           "block_bytes": self.block_bytes,
                           "entries": payload}, sort_keys=True)


@dataclass(frozen=True)
class RoundResult:
    assembled: AssembledTensor
    plan: AllocationPlan
    ledger: BandwidthLedger
    reports: tuple[AgentReport, ...]
    bundles: dict[int, ImportanceBundle]


def run_round(agents: list[AgentState], ego_id: int, config: BudgetConfig,
              params: Optional[ProtocolParams] = None,
              planner: Optional[Planner] = None,
              round_id: int = 0) -> RoundResult:
    """Execute one metadata -> plan -> payload cycle and assemble at the ego."""
    by_id = {a.agent_id: a for a in agents}
    if len(by_id) != len(agents):
        raise StructuralError("duplicate agent id in scenario")
    if ego_id not in by_id:
        raise StructuralError(f"ego agent {ego_id} not present")
    ego = by_id[ego_id]
    shape = (ego.features.height, ego.features.width, ego.features.channels)
    for a in agents:
        if (a.features.height, a.features.width, a.features.channels) != shape:
            raise StructuralError(f"agent {a.agent_id} disagrees on feature shape")

    grid = PatchGrid(shape[0], shape[1], config.patch_size)
    if params is None:
        params = build_params(config.seed, shape[2], config.experts)
    if planner is None:
        planner = plan_round
    ledger = BandwidthLedger(config.budget_blocks, 4 * config.patch_size ** 2)

    collaborators = sorted(aid for aid in by_id if aid != ego_id)
    senders = {aid: Sender(aid, params.spatial, params.classifier)
               for aid in collaborators}

    # metadata round: every collaborator -> ego, through the wire
    bundles: dict[int, ImportanceBundle] = {}
    reports: list[AgentReport] = []
    for aid in collaborators:
        bundle = senders[aid].make_bundle(by_id[aid].features, config.patch_size)
        bundles[aid] = bundle
        raw = encode(bundle.to_metadata(round_id, ego_id))
        ledger.record("metadata", aid, round_id, len(raw))
        reports.append(AgentReport.from_metadata(decode(raw)))

    # plan round: ego computes and broadcasts
    plan = planner(reports, config, shape[2], round_id)
    payloads = []
    if collaborators:
        raw = encode(plan.to_message(ego_id))
        ledger.record("plan", ego_id, round_id, len(raw))
        plan_wire = decode(raw)

        # payload round: collaborators answer their row; silent when empty
        for rank, aid in enumerate(collaborators):
            row = plan_wire.grants[rank].astype(np.int64)
            if row.sum() == 0:
                continue
            msg = senders[aid].build_payload(by_id[aid].features, bundles[aid],
                                             row, round_id, ego_id)
            raw = encode(msg)
            ledger.record("payload", aid, round_id, len(raw), blocks=len(msg.blocks))
            payloads.append(decode(raw))

    assembled = assemble(ego.features, payloads, grid)
    problems = ledger.audit_against(plan, round_id)
    if problems:
        raise ProtocolError("; ".join(problems))
    return RoundResult(assembled, plan, ledger, tuple(reports), bundles)


def communication_rate(ledger: BandwidthLedger, shape: tuple[int, int, int],
                       collaborators: int, round_id: int = 0) -> float:
    """Bytes moved in a round, normalized so that 16x-compressed full feature
    exchange equals 1.0. Metadata and plan bytes count toward the rate."""
    if collaborators < 1:
        raise StructuralError("communication rate undefined without collaborators")
    h, w, c = shape
    reference = collaborators * h * w * c * 4.0 / RAW_COMPRESSION
    return ledger.round_bytes(round_id) / reference
