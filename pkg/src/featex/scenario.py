"""Synthetic scenes with known channel structure and per-agent occlusion.

Channels come in three roles: primary channels carry sharp Gaussian blobs
(peak 1.0) plus faint noise, secondary channels carry the blurred blob
context rescaled to peak 0.4, and marginal channels are pure low-amplitude
noise (RMS 0.05). Every agent observes the same underlying scene through its
own random half-plane visibility mask, so the ground truth of who can see
what is known exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import FeatureMap, gaussian_smooth
from .errors import StructuralError
from .sender import GROUP_MARGINAL, GROUP_PRIMARY, GROUP_SECONDARY

PRIMARY_PEAK = 1.0
SECONDARY_PEAK = 0.4
SECONDARY_BLUR_SIGMA = 2.0
MARGINAL_RMS = 0.05
PRIMARY_NOISE_RMS = 0.01
OBJECT_MASK_LEVEL = 0.35  # blob field level that counts as "object"


@dataclass(frozen=True)
class SceneConfig:
    height: int = 16
    width: int = 16
    channels: int = 16
    agents: int = 3
    blobs: int = 8
    blob_sigma: tuple[float, float] = (2.0, 2.4)
    role_counts: tuple[int, int, int] = field(default=None)  # primary, secondary, marginal

    def __post_init__(self):
        if min(self.height, self.width, self.channels, self.agents) < 1:
            raise StructuralError("scene dimensions must be positive")
        if self.blobs < 0:
            raise StructuralError("blob count must be >= 0")
        if self.role_counts is None:
            marginal = self.channels // 2
            secondary = max((self.channels - marginal) // 4, 0)
            primary = self.channels - marginal - secondary
            object.__setattr__(self, "role_counts", (primary, secondary, marginal))
        if sum(self.role_counts) != self.channels or min(self.role_counts) < 0:
            raise StructuralError(
                f"role counts {self.role_counts} do not partition {self.channels} channels")


@dataclass(frozen=True)
class SyntheticScene:
    config: SceneConfig
    seed: int
    agent_maps: tuple[FeatureMap, ...]   # index 0 is the ego agent
    content: np.ndarray                  # (H, W, C) unoccluded scene
    object_mask: np.ndarray              # (H, W) bool
    roles: np.ndarray                    # (C,) group code per channel
    visibility: np.ndarray               # (N, H, W) bool

    @property
    def primary_channels(self) -> np.ndarray:
        return np.flatnonzero(self.roles == GROUP_PRIMARY)

    @property
    def marginal_channels(self) -> np.ndarray:
        return np.flatnonzero(self.roles == GROUP_MARGINAL)


def _half_plane(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Random half-plane through a point near the grid center."""
    theta = rng.uniform(0.0, 2.0 * math.pi)
    cy = height / 2.0 + rng.uniform(-0.15, 0.15) * height
    cx = width / 2.0 + rng.uniform(-0.15, 0.15) * width
    ys, xs = np.mgrid[0:height, 0:width]
    return ((ys - cy) * math.sin(theta) + (xs - cx) * math.cos(theta)) >= 0.0


def generate_scene(config: SceneConfig, seed: int) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    h, w, c = config.height, config.width, config.channels

    # blob field shared by every informative channel; centers stay off the
    # border so blob mass is not clipped away
    field_hw = np.zeros((h, w))
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(config.blobs):
        cy = rng.uniform(0.15 * h, 0.85 * h)
        cx = rng.uniform(0.15 * w, 0.85 * w)
        sigma = rng.uniform(*config.blob_sigma)
        field_hw += PRIMARY_PEAK * np.exp(
            -((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * sigma ** 2))
    object_mask = field_hw >= OBJECT_MASK_LEVEL

    context = gaussian_smooth(field_hw, SECONDARY_BLUR_SIGMA)
    peak = context.max()
    if peak > 0:
        context = context * (SECONDARY_PEAK / peak)

    # channel roles, shuffled so role never correlates with channel index
    n_pri, n_sec, n_mar = config.role_counts
    roles = np.array([GROUP_PRIMARY] * n_pri + [GROUP_SECONDARY] * n_sec
                     + [GROUP_MARGINAL] * n_mar)
    rng.shuffle(roles)

    content = np.empty((h, w, c))
    for ch in range(c):
        if roles[ch] == GROUP_PRIMARY:
            gain = rng.uniform(0.9, 1.1)
            content[:, :, ch] = field_hw * gain + rng.normal(0, PRIMARY_NOISE_RMS, (h, w))
        elif roles[ch] == GROUP_SECONDARY:
            gain = rng.uniform(0.9, 1.1)
            content[:, :, ch] = context * gain + rng.normal(0, PRIMARY_NOISE_RMS, (h, w))
        else:
            content[:, :, ch] = rng.normal(0, MARGINAL_RMS, (h, w))

    # distinct random half-plane occlusion per agent
    visibility = np.empty((config.agents, h, w), dtype=bool)
    for n in range(config.agents):
        for _ in range(32):
            mask = _half_plane(rng, h, w)
            if not any(np.array_equal(mask, visibility[m]) for m in range(n)):
                break
        visibility[n] = mask

    maps = tuple(FeatureMap(content * visibility[n][:, :, None])
                 for n in range(config.agents))
    return SyntheticScene(config, seed, maps, content, object_mask, roles, visibility)
