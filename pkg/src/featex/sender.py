"""Per-agent importance estimation and priority-ordered payload assembly.

A sender turns its local feature map into transmitted metadata (spatial
importance map, per-patch channel saliency) plus retained state (per-patch
channel weights and group labels). When the coordinator's plan arrives, the
retained state decides which channel blocks to emit and in what order:
primary-labeled channels first, then secondary, then marginal, each tier
sorted by descending weight.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (FeatureMap, Kernel2D, PatchGrid, conv2d, laplacian_kernel,
                   sigmoid, softmax)
from .errors import AllocationError, StructuralError
from .params import ClassifierParams, SpatialHeadParams
from .wire import MetadataMessage, PayloadBlock, PayloadMessage

EPSILON = 1e-6
DEFAULT_OMEGA = (1.0, 0.5, 0.1)  # primary, secondary, marginal

GROUP_PRIMARY = 0
GROUP_SECONDARY = 1
GROUP_MARGINAL = 2


@dataclass(frozen=True)
class SpatialImportanceMap:
    values: np.ndarray  # (H, W), sigmoid-bounded to [0, 1]
    agent_id: int


@dataclass(frozen=True)
class PatchScoreTable:
    """Laplacian magnitude per (patch, channel); nonnegative by construction."""

    scores: np.ndarray  # (Q, C)
    patch_size: int


@dataclass(frozen=True)
class PatchStats:
    mean: np.ndarray  # (Q, C) mean activation per patch
    peak: np.ndarray  # (Q, C) max activation per patch


@dataclass(frozen=True)
class GroupAssignment:
    probs: np.ndarray   # (Q, C, 3) rows sum to 1
    labels: np.ndarray  # (Q, C) in {0 primary, 1 secondary, 2 marginal}
    omega: np.ndarray   # (3,) group weights, > 0


@dataclass(frozen=True)
class ChannelWeights:
    """Per-patch softmax over channel scores. Retained, never transmitted."""

    weights: np.ndarray  # (Q, C)


@dataclass(frozen=True)
class ChannelSaliencyMap:
    values: np.ndarray  # (rows, cols), nonnegative
    agent_id: int
    patch_size: int


@dataclass(frozen=True)
class ImportanceBundle:
    """Everything one round of sender-side estimation produces.

    Only `spatial` and `saliency` go on the wire; the rest stays local.
    """

    agent_id: int
    patch_size: int
    spatial: SpatialImportanceMap
    saliency: ChannelSaliencyMap
    scores: PatchScoreTable
    groups: GroupAssignment
    weights: ChannelWeights

    def to_metadata(self, round_id: int, receiver_id: int) -> MetadataMessage:
        h, w = self.spatial.values.shape
        return MetadataMessage(round_id, self.agent_id, receiver_id, h, w,
                               self.patch_size, self.spatial.values,
                               self.saliency.values)


def _conv_stack(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Multi-channel 3x3 convolution: (H, W, Cin) -> (H, W, Cout)."""
    h, w, cin = x.shape
    cout = weights.shape[0]
    out = np.empty((h, w, cout))
    for o in range(cout):
        acc = np.zeros((h, w))
        for c in range(cin):
            acc += conv2d(x[:, :, c], Kernel2D(weights[o, c]))
        out[:, :, o] = acc + bias[o]
    return out


def predict_spatial(x: FeatureMap, params: SpatialHeadParams,
                    agent_id: int = 0) -> SpatialImportanceMap:
    """Two-layer conv head (3x3, 16 hidden, relu, 3x3) squashed to [0, 1]."""
    if params.w1.shape[1] != x.channels:
        raise StructuralError(
            f"spatial head expects {params.w1.shape[1]} channels, map has {x.channels}")
    hidden = np.maximum(_conv_stack(x.data, params.w1, params.b1), 0.0)
    logits = _conv_stack(hidden, params.w2, params.b2)[:, :, 0]
    return SpatialImportanceMap(sigmoid(logits), agent_id)


def score_patches(x: FeatureMap, grid: PatchGrid) -> PatchScoreTable:
    """L1 mass of the Laplacian response, summed per patch per channel."""
    if (grid.height, grid.width) != (x.height, x.width):
        raise StructuralError("patch grid does not partition the feature map")
    lap = laplacian_kernel()
    scores = np.empty((grid.num_patches, x.channels))
    for c in range(x.channels):
        response = np.abs(conv2d(x.channel(c), lap))
        scores[:, c] = grid.pool_sum(response).ravel()
    return PatchScoreTable(scores, grid.patch_size)


def patch_stats(x: FeatureMap, grid: PatchGrid) -> PatchStats:
    """Mean and max activation per (patch, channel)."""
    q = grid.num_patches
    mean = np.empty((q, x.channels))
    peak = np.empty((q, x.channels))
    for c in range(x.channels):
        mean[:, c] = grid.pool_mean(x.channel(c)).ravel()
        peak[:, c] = grid.pool_max(x.channel(c)).ravel()
    return PatchStats(mean, peak)


def classify_groups(scores: PatchScoreTable, stats: PatchStats,
                    params: ClassifierParams,
                    omega: tuple[float, float, float] = DEFAULT_OMEGA) -> GroupAssignment:
    """Shared affine map over [score density, patch mean, patch max] + softmax.

    The raw Laplacian score is a patch sum, so it is fed as a per-pixel
    density to keep the classifier's scale independent of patch size. Label
    ties resolve toward the lower-priority group.
    """
    if scores.scores.shape != stats.mean.shape:
        raise StructuralError("score table and stats are misaligned")
    density = scores.scores / float(scores.patch_size ** 2)
    feats = np.stack([density, stats.mean, stats.peak], axis=-1)  # (Q, C, 3)
    logits = feats @ params.weights.T + params.bias
    probs = softmax(logits)
    labels = 2 - np.argmax(probs[..., ::-1], axis=-1)
    w = np.asarray(omega, dtype=np.float64)
    if w.shape != (3,) or np.any(w <= 0):
        raise StructuralError(f"omega must be 3 positive weights, got {omega}")
    return GroupAssignment(probs, labels, w)


def channel_saliency(scores: PatchScoreTable, groups: GroupAssignment,
                     grid: PatchGrid, agent_id: int = 0) -> ChannelSaliencyMap:
    """Normalized maximum of group-weighted scores per patch.

    The per-patch maximum of (omega . pi) * S is divided by the per-patch sum
    plus epsilon, which bounds values to [0, 1] and makes maps comparable
    across agents.
    """
    weighted = (groups.probs @ groups.omega) * scores.scores  # (Q, C)
    top = weighted.max(axis=1)
    total = weighted.sum(axis=1)
    values = (top / (total + EPSILON)).reshape(grid.rows, grid.cols)
    return ChannelSaliencyMap(values, agent_id, grid.patch_size)


def sort_channels(scores: PatchScoreTable) -> ChannelWeights:
    """Per-patch softmax (unit temperature) over the channel score vector."""
    return ChannelWeights(softmax(scores.scores))


def transmission_order(groups: GroupAssignment, weights: ChannelWeights,
                       patch: int) -> list[int]:
    """Channel order for one patch: group priority, then weight descending,
    then channel index ascending."""
    labels = groups.labels[patch]
    w = weights.weights[patch]
    return sorted(range(len(w)), key=lambda c: (labels[c], -w[c], c))


def build_message(x: FeatureMap, grants_row: np.ndarray, groups: GroupAssignment,
                  weights: ChannelWeights, grid: PatchGrid, round_id: int,
                  sender_id: int, receiver_id: int) -> PayloadMessage:
    """Emit exactly grants_row[k] blocks per patch in transmission order."""
    grants = np.asarray(grants_row)
    if grants.shape != (grid.num_patches,):
        raise StructuralError(
            f"plan row has {grants.shape} entries for {grid.num_patches} patches")
    if grants.size and grants.min() < 0:
        raise StructuralError("negative grant in plan row")
    blocks = []
    for k in range(grid.num_patches):
        take = int(grants[k])
        if take == 0:
            continue
        if take > x.channels:
            raise AllocationError(
                f"plan grants {take} blocks at patch {k} but only {x.channels} channels exist")
        rs, cs = grid.patch_slices(k)
        order = transmission_order(groups, weights, k)
        for c in order[:take]:
            tile = x.data[rs, cs, c]
            blocks.append(PayloadBlock(k, c, tile.ravel()))
    return PayloadMessage(round_id, sender_id, receiver_id, tuple(blocks))


def ordering_violations(msg: PayloadMessage, groups: GroupAssignment) -> list[str]:
    """Scan a payload against the group assignment for priority violations.

    A block of group g is a violation if, for the same patch, some channel of
    a strictly higher-priority group was never sent at all.
    """
    sent: dict[int, list[int]] = {}
    for blk in msg.blocks:
        sent.setdefault(blk.patch, []).append(blk.channel)
    problems = []
    for patch, channels in sent.items():
        labels = groups.labels[patch]
        sent_set = set(channels)
        worst = max(labels[c] for c in channels)
        # every channel of a group strictly above the worst sent group must be sent
        for c in range(len(labels)):
            if labels[c] < worst and c not in sent_set:
                problems.append(
                    f"patch {patch}: group-{worst} block sent while channel {c} "
                    f"(group {labels[c]}) was skipped")
        # within the message, per-patch order must be non-decreasing in group
        seq = [int(labels[c]) for c in channels]
        if any(a > b for a, b in zip(seq, seq[1:])):
            problems.append(f"patch {patch}: blocks out of group order {seq}")
    return problems


class Sender:
    """One per agent; owns the (shared, seeded) head parameters."""

    def __init__(self, agent_id: int, spatial_params: SpatialHeadParams,
                 classifier_params: ClassifierParams,
                 omega: tuple[float, float, float] = DEFAULT_OMEGA):
        self.agent_id = agent_id
        self.spatial_params = spatial_params
        self.classifier_params = classifier_params
        self.omega = omega

    def make_bundle(self, x: FeatureMap, patch_size: int) -> ImportanceBundle:
        grid = PatchGrid(x.height, x.width, patch_size)
        spatial = predict_spatial(x, self.spatial_params, self.agent_id)
        scores = score_patches(x, grid)
        stats = patch_stats(x, grid)
        groups = classify_groups(scores, stats, self.classifier_params, self.omega)
        saliency = channel_saliency(scores, groups, grid, self.agent_id)
        weights = sort_channels(scores)
        return ImportanceBundle(self.agent_id, patch_size, spatial, saliency,
                                scores, groups, weights)

    def build_payload(self, x: FeatureMap, bundle: ImportanceBundle,
                      grants_row: np.ndarray, round_id: int,
                      receiver_id: int) -> PayloadMessage:
        grid = PatchGrid(x.height, x.width, bundle.patch_size)
        return build_message(x, grants_row, bundle.groups, bundle.weights, grid,
                             round_id, self.agent_id, receiver_id)
