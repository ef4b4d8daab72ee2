"""Deterministic parameter generation for every untrained head.

Seeds flow from one root through named substreams, so a scenario seed pins
every weight in the system. Heads whose output must carry meaning without
training (spatial importance, group classifier, saliency refiner) default to
a structured init centered on that meaning, perturbed by a seeded draw; purely
mechanical heads (gate MLP, SE, attention projections) use the plain seeded
uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) draw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# substream labels, fixed order; do not reorder (changes every derived seed)
_STREAMS = ("spatial", "classifier", "refine", "gate", "experts", "recal", "se")

# jitter applied on top of structured centers, as a fraction of the fan-in bound
_JITTER = 0.25

# routing heads stay gentle while untrained, or their content-dependent
# branches drown the allocation signal in the fidelity comparison
_EXPERT_JITTER = 0.01
_SE_SCALE = 0.25
_RECAL_SCALE = 0.25


def _rng_for(seed: int, stream: str) -> np.random.Generator:
    idx = _STREAMS.index(stream)
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return np.random.default_rng(children[idx])


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# sender: spatial importance head (3x3 conv, 16 hidden, relu, 3x3 conv, sigmoid)
# ---------------------------------------------------------------------------

_SPATIAL_HIDDEN = 16
_SPATIAL_GAIN = 15.0     # sharpness of the activation-vs-threshold response
_SPATIAL_THRESH = 0.1    # local mean activation treated as "interesting"


@dataclass(frozen=True)
class SpatialHeadParams:
    w1: np.ndarray  # (hidden, C, 3, 3)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (1, hidden, 3, 3)
    b2: np.ndarray  # (1,)


def spatial_head(channels: int, seed: int, style: str = "semantic") -> SpatialHeadParams:
    h = _SPATIAL_HIDDEN
    rng = _rng_for(seed, "spatial")
    if style == "zeros":
        return SpatialHeadParams(np.zeros((h, channels, 3, 3)), np.zeros(h),
                                 np.zeros((1, h, 3, 3)), np.zeros(1))
    if style == "uniform":
        return SpatialHeadParams(
            uniform_fan_in(rng, (h, channels, 3, 3), channels * 9),
            uniform_fan_in(rng, h, channels * 9),
            uniform_fan_in(rng, (1, h, 3, 3), h * 9),
            uniform_fan_in(rng, 1, h * 9))
    if style != "semantic":
        raise ValueError(f"unknown spatial head style {style!r}")
    # first layer: hidden units approximate the per-pixel channel mean;
    # second layer: 3x3 average with gain/threshold, so the sigmoid saturates
    # high where local activation mass is high.
    w1 = np.zeros((h, channels, 3, 3))
    w1[:, :, 1, 1] = 1.0 / channels
    w1 += _JITTER * uniform_fan_in(rng, w1.shape, channels * 9)
    b1 = _JITTER * uniform_fan_in(rng, h, channels * 9)
    w2 = np.full((1, h, 3, 3), _SPATIAL_GAIN / (h * 9))
    w2 += _JITTER * uniform_fan_in(rng, w2.shape, h * 9)
    b2 = np.array([-_SPATIAL_GAIN * _SPATIAL_THRESH])
    return SpatialHeadParams(w1, b1, w2, b2)


# ---------------------------------------------------------------------------
# sender: 3-group channel classifier (shared affine on [score, mean, max])
# ---------------------------------------------------------------------------

_CLS_SHARPNESS = 8.0
_CLS_T_LOW = 0.12    # below: marginal
_CLS_T_HIGH = 0.45   # above: primary


@dataclass(frozen=True)
class ClassifierParams:
    weights: np.ndarray  # (3 groups, 3 features)
    bias: np.ndarray     # (3,)


def classifier_head(seed: int, style: str = "semantic") -> ClassifierParams:
    rng = _rng_for(seed, "classifier")
    if style == "zeros":
        return ClassifierParams(np.zeros((3, 3)), np.zeros(3))
    if style == "uniform":
        return ClassifierParams(uniform_fan_in(rng, (3, 3), 3),
                                uniform_fan_in(rng, 3, 3))
    if style != "semantic":
        raise ValueError(f"unknown classifier style {style!r}")
    # ordinal logits in u = mean(features): marginal below T_LOW, primary
    # above T_HIGH, secondary between; ties resolve toward lower priority.
    a = _CLS_SHARPNESS
    w = np.zeros((3, 3))
    b = np.zeros(3)
    w[0, :] = 2.0 * a / 3.0
    b[0] = -a * (_CLS_T_LOW + _CLS_T_HIGH)
    w[1, :] = a / 3.0
    b[1] = -a * _CLS_T_LOW
    w += _JITTER * uniform_fan_in(rng, w.shape, 3) * 0.1
    return ClassifierParams(w, b)


# ---------------------------------------------------------------------------
# coordinator: saliency refinement conv (A agents in, A agents out, bias-free)
# ---------------------------------------------------------------------------


def refine_conv(agents: int, seed: int, style: str = "identity_jitter") -> np.ndarray:
    """(A, A, 3, 3) mixing kernel applied to the stack of saliency maps."""
    rng = _rng_for(seed, "refine")
    shape = (agents, agents, 3, 3)
    if style == "zeros":
        return np.zeros(shape)
    if style == "identity":
        w = np.zeros(shape)
        for j in range(agents):
            w[j, j, 1, 1] = 1.0
        return w
    if style == "uniform":
        return uniform_fan_in(rng, shape, agents * 9)
    if style != "identity_jitter":
        raise ValueError(f"unknown refine style {style!r}")
    # identity-dominant: each agent keeps its own map, plus a small seeded
    # cross-agent interaction term. A zero-centered draw would decouple the
    # refined map from the agent that produced it.
    w = np.zeros(shape)
    for j in range(agents):
        w[j, j, 1, 1] = 1.0
    w += _JITTER * uniform_fan_in(rng, shape, agents * 9)
    return w


# ---------------------------------------------------------------------------
# routing: gate MLP (pooled scalar -> 16 -> m experts)
# ---------------------------------------------------------------------------

_GATE_HIDDEN = 16


@dataclass(frozen=True)
class GateParams:
    w1: np.ndarray  # (hidden, 1)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (m, hidden)
    b2: np.ndarray  # (m,)

    @property
    def num_experts(self) -> int:
        return self.w2.shape[0]


def gate_mlp(num_experts: int, seed: int, style: str = "uniform") -> GateParams:
    h = _GATE_HIDDEN
    if style == "zeros":
        return GateParams(np.zeros((h, 1)), np.zeros(h),
                          np.zeros((num_experts, h)), np.zeros(num_experts))
    if style != "uniform":
        raise ValueError(f"unknown gate style {style!r}")
    rng = _rng_for(seed, "gate")
    return GateParams(uniform_fan_in(rng, (h, 1), 1),
                      uniform_fan_in(rng, h, 1),
                      uniform_fan_in(rng, (num_experts, h), h),
                      uniform_fan_in(rng, num_experts, h))


# ---------------------------------------------------------------------------
# routing: multi-scale experts (per expert: shared 3x3, 5x5, 7x7 kernels)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpertParams:
    kernels: tuple[np.ndarray, ...]  # (3x3, 5x5, 7x7)


def expert_bank(num_experts: int, seed: int, style: str = "identity") -> tuple[ExpertParams, ...]:
    rng = _rng_for(seed, "experts")
    sizes = (3, 5, 7)
    bank = []
    for _ in range(num_experts):
        kernels = []
        for k in sizes:
            if style == "identity":
                w = np.zeros((k, k))
                w[k // 2, k // 2] = 1.0
            elif style == "uniform":
                w = uniform_fan_in(rng, (k, k), k * k)
            elif style == "identity_jitter":
                w = np.zeros((k, k))
                w[k // 2, k // 2] = 1.0
                w += _EXPERT_JITTER * uniform_fan_in(rng, (k, k), k * k)
            else:
                raise ValueError(f"unknown expert style {style!r}")
            kernels.append(w)
        bank.append(ExpertParams(tuple(kernels)))
    return tuple(bank)


# ---------------------------------------------------------------------------
# routing: inter-agent attention projections (shared scalars, value = identity)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RecalParams:
    w_q: float
    w_k: float
    w_v: float = 1.0  # identity init by contract: N=1 attention is the identity


def recal_projections(seed: int, style: str = "uniform") -> RecalParams:
    if style == "zeros":
        return RecalParams(0.0, 0.0)
    if style != "uniform":
        raise ValueError(f"unknown recal style {style!r}")
    rng = _rng_for(seed, "recal")
    q, k = _RECAL_SCALE * uniform_fan_in(rng, 2, 1)
    return RecalParams(float(q), float(k))


# ---------------------------------------------------------------------------
# routing: squeeze-excitation MLP (C -> C/4 -> C)
# ---------------------------------------------------------------------------

SE_REDUCTION = 4


@dataclass(frozen=True)
class SEParams:
    w1: np.ndarray  # (hidden, C)
    b1: np.ndarray
    w2: np.ndarray  # (C, hidden)
    b2: np.ndarray


def se_mlp(channels: int, seed: int, style: str = "uniform") -> SEParams:
    hidden = max(channels // SE_REDUCTION, 1)
    if style == "zeros":
        return SEParams(np.zeros((hidden, channels)), np.zeros(hidden),
                        np.zeros((channels, hidden)), np.zeros(channels))
    if style != "uniform":
        raise ValueError(f"unknown SE style {style!r}")
    rng = _rng_for(seed, "se")
    return SEParams(_SE_SCALE * uniform_fan_in(rng, (hidden, channels), channels),
                    _SE_SCALE * uniform_fan_in(rng, hidden, channels),
                    _SE_SCALE * uniform_fan_in(rng, (channels, hidden), hidden),
                    _SE_SCALE * uniform_fan_in(rng, channels, hidden))


# ---------------------------------------------------------------------------
# bundle used by the round driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolParams:
    """Every head needed for one protocol cycle, pinned by one seed."""

    seed: int
    spatial: SpatialHeadParams
    classifier: ClassifierParams
    gate: GateParams
    experts: tuple[ExpertParams, ...]
    recal: RecalParams
    se: SEParams

    def refine(self, agents: int) -> np.ndarray:
        return refine_conv(agents, self.seed)


def build_params(seed: int, channels: int, num_experts: int) -> ProtocolParams:
    return ProtocolParams(
        seed=seed,
        spatial=spatial_head(channels, seed),
        classifier=classifier_head(seed),
        gate=gate_mlp(num_experts, seed),
        experts=expert_bank(num_experts, seed),
        recal=recal_projections(seed),
        se=se_mlp(channels, seed),
    )
