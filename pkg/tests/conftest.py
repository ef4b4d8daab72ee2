"""Shared independent oracles. These stay deliberately naive: double loops
and direct formula evaluation, never the library code paths they check."""
import math

import numpy as np
import pytest


def brute_conv2d(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """True convolution with zero padding, elementwise double loop."""
    h, w = x.shape
    k = taps.shape[0]
    r = k // 2
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(k):
                for b in range(k):
                    # true convolution: kernel indices run opposite the image
                    ii = i - (a - r)
                    jj = j - (b - r)
                    if 0 <= ii < h and 0 <= jj < w:
                        acc += taps[a, b] * x[ii, jj]
            out[i, j] = acc
    return out


def exp_normalize(v, tau=1.0):
    """Direct softmax evaluation without stabilization tricks."""
    exps = [math.exp(float(x) / tau) for x in v]
    s = sum(exps)
    return np.array([e / s for e in exps])


def brute_patch_scores(data: np.ndarray, taps: np.ndarray, patch: int) -> np.ndarray:
    """Per-(patch, channel) L1 of the convolution response, all by hand."""
    h, w, c = data.shape
    rows, cols = h // patch, w // patch
    out = np.zeros((rows * cols, c))
    for ch in range(c):
        resp = np.abs(brute_conv2d(data[:, :, ch], taps))
        for pr in range(rows):
            for pc in range(cols):
                tile = resp[pr * patch:(pr + 1) * patch, pc * patch:(pc + 1) * patch]
                out[pr * cols + pc, ch] = tile.sum()
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
