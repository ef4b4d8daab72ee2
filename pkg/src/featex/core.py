"""Dense tensor container and the numeric primitives everything else builds on.

All arithmetic is float64 internally; wire payloads are quantized to float32
elsewhere. Every function here is pure and safe to call concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d
from scipy.signal import convolve2d

from .errors import StructuralError

LAPLACIAN_4 = np.array([[0.0, 1.0, 0.0],
                        [1.0, -4.0, 1.0],
                        [0.0, 1.0, 0.0]])

GAUSSIAN_SIGMA = 1.0  # default smoothing width used by the coordinator


@dataclass(frozen=True)
class FeatureMap:
    """Dense H x W x C activation grid for one agent."""

    data: np.ndarray  # (H, W, C) float64

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise StructuralError(f"feature map must be (H, W, C), got {arr.shape}")
        if min(arr.shape) < 1:
            raise StructuralError(f"empty feature map dimension: {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise StructuralError("feature map contains non-finite entries")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def channel(self, c: int) -> np.ndarray:
        return self.data[:, :, c]


@dataclass(frozen=True)
class PatchGrid:
    """Partition of an H x W grid into non-overlapping P x P tiles, row-major."""

    height: int
    width: int
    patch_size: int
    rows: int = field(init=False)
    cols: int = field(init=False)

    def __post_init__(self):
        p = self.patch_size
        if p < 1:
            raise StructuralError(f"patch size must be >= 1, got {p}")
        if self.height % p or self.width % p:
            raise StructuralError(
                f"patch size {p} must divide grid {self.height}x{self.width}")
        object.__setattr__(self, "rows", self.height // p)
        object.__setattr__(self, "cols", self.width // p)

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    def patch_slices(self, k: int) -> tuple[slice, slice]:
        """Row/column slices of patch k (row-major patch order)."""
        if not 0 <= k < self.num_patches:
            raise StructuralError(f"patch index {k} out of range")
        r, c = divmod(k, self.cols)
        p = self.patch_size
        return slice(r * p, (r + 1) * p), slice(c * p, (c + 1) * p)

    def index_sets(self) -> list[np.ndarray]:
        """Per-patch flat pixel indices; the sets partition the grid exactly."""
        flat = np.arange(self.height * self.width).reshape(self.height, self.width)
        return [flat[self.patch_slices(k)].ravel() for k in range(self.num_patches)]

    def pool_max(self, grid: np.ndarray) -> np.ndarray:
        """Per-patch maximum of an H x W grid, returned as (rows, cols)."""
        g = np.asarray(grid, dtype=np.float64)
        if g.shape != (self.height, self.width):
            raise StructuralError(f"grid {g.shape} does not match {self.height}x{self.width}")
        p = self.patch_size
        return g.reshape(self.rows, p, self.cols, p).max(axis=(1, 3))

    def pool_sum(self, grid: np.ndarray) -> np.ndarray:
        g = np.asarray(grid, dtype=np.float64)
        p = self.patch_size
        return g.reshape(self.rows, p, self.cols, p).sum(axis=(1, 3))

    def pool_mean(self, grid: np.ndarray) -> np.ndarray:
        return self.pool_sum(grid) / float(self.patch_size ** 2)


@dataclass(frozen=True)
class Kernel2D:
    """Small odd square stencil with a semantic label."""

    taps: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise StructuralError(f"kernel must be square, got {t.shape}")
        if t.shape[0] not in (1, 3, 5, 7):
            raise StructuralError(f"kernel size {t.shape[0]} not in {{1,3,5,7}}")
        if not np.all(np.isfinite(t)):
            raise StructuralError("kernel has non-finite taps")
        object.__setattr__(self, "taps", t)

    @property
    def size(self) -> int:
        return self.taps.shape[0]


def laplacian_kernel() -> Kernel2D:
    """Canonical 4-neighbor discrete Laplacian."""
    return Kernel2D(LAPLACIAN_4, label="laplacian4")


def conv2d(channel: np.ndarray, kernel: Kernel2D) -> np.ndarray:
    """True 2-D convolution (kernel flipped), zero padding, same-size output."""
    x = np.asarray(channel, dtype=np.float64)
    if x.ndim != 2:
        raise StructuralError(f"expected a 2-D channel slice, got {x.shape}")
    return convolve2d(x, kernel.taps, mode="same", boundary="fill", fillvalue=0.0)


def softmax(v: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Stable softmax along the last axis; temperature divides the logits."""
    x = np.asarray(v, dtype=np.float64)
    if x.size == 0:
        raise StructuralError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise StructuralError("softmax input has non-finite entries")
    if not temperature > 0:
        raise StructuralError(f"softmax temperature must be > 0, got {temperature}")
    z = x / float(temperature)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gaussian_taps(sigma: float) -> np.ndarray:
    """Truncated 1-D Gaussian, radius ceil(2*sigma), normalized to sum 1."""
    if not sigma > 0:
        raise StructuralError(f"sigma must be > 0, got {sigma}")
    radius = max(1, int(math.ceil(2.0 * sigma)))
    offs = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (offs / sigma) ** 2)
    return w / w.sum()


def gaussian_smooth(grid: np.ndarray, sigma: float = GAUSSIAN_SIGMA) -> np.ndarray:
    """Separable truncated Gaussian blur.

    Border taps are renormalized by the in-bounds weight mass, so a constant
    grid maps to itself and interior-supported mass is preserved.
    """
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2:
        raise StructuralError(f"expected a 2-D grid, got {g.shape}")
    taps = gaussian_taps(sigma)
    out = g
    for axis in (0, 1):
        num = convolve1d(out, taps, axis=axis, mode="constant", cval=0.0)
        den = convolve1d(np.ones_like(out), taps, axis=axis, mode="constant", cval=0.0)
        out = num / den
    return out


def global_avg_pool(tensor: np.ndarray) -> np.ndarray:
    """Mean over (agent, h, w) for each channel of an (N, C, H, W) tensor."""
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim != 4 or t.size == 0:
        raise StructuralError(f"expected a non-empty (N, C, H, W) tensor, got {t.shape}")
    return t.mean(axis=(0, 2, 3))


def l1_norm_per_channel(fmap: FeatureMap) -> np.ndarray:
    """Sum of absolute activations per channel."""
    return np.abs(fmap.data).sum(axis=(0, 1))
