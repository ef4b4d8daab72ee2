"""Channel alignment before fusion.

Sparse payloads are scattered into a dense zero-padded (N, C, H, W) tensor.
Each channel is dispatched to exactly one multi-scale expert by a soft gate
(hard argmax dispatch, soft probabilities kept for diagnostics); expert output
is combined with a residual squeeze-excitation branch and the raw input.

Agent-axis reductions in the attention step sum their operands in sorted
order, so permuting the non-ego agents reproduces the ego row bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FeatureMap, Kernel2D, PatchGrid, conv2d, global_avg_pool, sigmoid, softmax
from .errors import ProtocolError, StructuralError
from .params import ExpertParams, GateParams, ProtocolParams, RecalParams, SEParams
from .wire import PayloadMessage


@dataclass(frozen=True)
class AssembledTensor:
    """Zero-padded stack of everything the ego agent holds after a round."""

    data: np.ndarray      # (N, C, H, W); zeros wherever presence is False
    presence: np.ndarray  # (N, C, Q) bool; row 0 (ego) is all True
    agent_ids: tuple[int, ...]
    patch_size: int

    @property
    def num_agents(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class RoutingGates:
    gates: np.ndarray       # (C, m) rows sum to 1
    assignment: np.ndarray  # (C,) argmax expert, ties to the lowest index


@dataclass(frozen=True)
class RoutedTensor:
    data: np.ndarray      # (N, C, H, W)
    presence: np.ndarray  # carried through from assembly
    agent_ids: tuple[int, ...]
    patch_size: int


def assemble(ego: FeatureMap, messages: list[PayloadMessage],
             grid: PatchGrid) -> AssembledTensor:
    """Scatter payload blocks around the ego features; unreceived stays zero."""
    if (grid.height, grid.width) != (ego.height, ego.width):
        raise StructuralError("patch grid does not match ego features")
    msgs = sorted(messages, key=lambda m: m.sender_id)
    n = 1 + len(msgs)
    c, h, w = ego.channels, ego.height, ego.width
    q = grid.num_patches
    tile = grid.patch_size ** 2

    data = np.zeros((n, c, h, w))
    presence = np.zeros((n, c, q), dtype=bool)
    data[0] = np.moveaxis(ego.data, 2, 0)
    presence[0] = True

    for row, msg in enumerate(msgs, start=1):
        for blk in msg.blocks:
            if not (0 <= blk.patch < q) or not (0 <= blk.channel < c):
                raise ProtocolError(
                    f"agent {msg.sender_id}: block ({blk.patch}, {blk.channel}) "
                    f"outside {q} patches x {c} channels")
            if blk.values.size != tile:
                raise ProtocolError(
                    f"agent {msg.sender_id}: tile of {blk.values.size} values, "
                    f"expected {tile}")
            if presence[row, blk.channel, blk.patch]:
                raise ProtocolError(
                    f"agent {msg.sender_id}: duplicate block ({blk.patch}, {blk.channel})")
            rs, cs = grid.patch_slices(blk.patch)
            data[row, blk.channel, rs, cs] = blk.values.astype(np.float64).reshape(
                grid.patch_size, grid.patch_size)
            presence[row, blk.channel, blk.patch] = True

    return AssembledTensor(data, presence, (0,) + tuple(m.sender_id for m in msgs),
                           grid.patch_size)


def gate(data: np.ndarray, params: GateParams) -> RoutingGates:
    """Per-channel soft expert affinity from the pooled channel statistic."""
    pooled = global_avg_pool(data)  # (C,)
    hidden = np.maximum(np.outer(pooled, params.w1[:, 0]) + params.b1, 0.0)
    logits = hidden @ params.w2.T + params.b2
    gates = softmax(logits)
    return RoutingGates(gates, np.argmax(gates, axis=1))


def expert_forward(x: np.ndarray, params: ExpertParams) -> np.ndarray:
    """Sum of depthwise 3x3 / 5x5 / 7x7 responses plus the identity skip.

    Kernels are shared across agents and channels, so the parameter count is
    independent of how channels were routed.
    """
    if x.size == 0:
        return x.copy()
    n, s, h, w = x.shape
    out = x.copy()
    for kern in params.kernels:
        k = Kernel2D(kern)
        for i in range(n):
            for j in range(s):
                out[i, j] += conv2d(x[i, j], k)
    return out


def _sorted_sum(arr: np.ndarray, axis: int) -> np.ndarray:
    """Order-canonical sum: sort the operands, then reduce."""
    return np.sort(arr, axis=axis).sum(axis=axis)


def recalibrate_agents(data: np.ndarray, params: RecalParams) -> np.ndarray:
    """Scaled dot-product attention over the agent axis, queried by the ego row.

    Scores at each position come from the channel-vector dot product of the
    projected ego row with each agent's projected row; the attended vector
    replaces the ego row, collaborator rows pass through untouched.
    """
    if data.ndim != 4:
        raise StructuralError(f"expected (N, C, H, W), got {data.shape}")
    n, c, _, _ = data.shape
    if n == 1 and params.w_v == 1.0:
        return data.copy()
    q = params.w_q * data[0]                      # (C, H, W)
    k = params.w_k * data                          # (N, C, H, W)
    v = params.w_v * data
    scores = np.einsum("chw,nchw->nhw", q, k) / math.sqrt(c)
    scores -= scores.max(axis=0, keepdims=True)
    e = np.exp(scores)
    alpha = e / _sorted_sum(e, axis=0)             # (N, H, W)
    attended = _sorted_sum(alpha[:, None] * v, axis=0)
    out = data.copy()
    out[0] = attended
    return out


def se_branch(data: np.ndarray, params: SEParams) -> np.ndarray:
    """Squeeze-excitation: pooled channel stats -> MLP -> sigmoid gain."""
    pooled = global_avg_pool(data)
    hidden = np.maximum(params.w1 @ pooled + params.b1, 0.0)
    scale = sigmoid(params.w2 @ hidden + params.b2)
    return data * scale[None, :, None, None]


def route(x: AssembledTensor, params: ProtocolParams) -> RoutedTensor:
    """Dispatch channels to experts over the recalibrated tensor, then add
    the SE branch and the raw residual."""
    gates = gate(x.data, params.gate)
    recal = recalibrate_agents(x.data, params.recal)
    expert_out = np.zeros_like(x.data)
    for e, expert in enumerate(params.experts):
        chans = np.flatnonzero(gates.assignment == e)
        if chans.size:
            expert_out[:, chans] = expert_forward(recal[:, chans], expert)
    out = expert_out + se_branch(x.data, params.se) + x.data
    return RoutedTensor(out, x.presence, x.agent_ids, x.patch_size)
