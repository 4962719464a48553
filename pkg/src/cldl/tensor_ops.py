"""Dense-array primitives used by the network forward/backward passes.

Everything is float64. Arrays are plain numpy ndarrays; functions accept a
single sample (e.g. conv input of shape (C, H, W)) or a batch with a leading
axis, and return the matching rank.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "RngState",
    "matmul",
    "conv2d",
    "conv2d_output_hw",
    "relu",
    "softmax",
    "global_avg_pool",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@dataclass(frozen=True)
class RngState:
    """Seed plus a pinned generator algorithm.

    The generator is numpy's PCG64 (O'Neill's permuted congruential
    generator). Its output stream is specified by the seed alone and is
    identical across platforms, so weight initialization and shuffling are
    reproducible from the seed.
    """

    seed: int
    algorithm: str = "pcg64"

    def generator(self) -> np.random.Generator:
        if self.algorithm != "pcg64":
            raise ValueError(f"unsupported PRNG algorithm: {self.algorithm}")
        return np.random.Generator(np.random.PCG64(self.seed))


def matmul(a, b):
    """Matrix product of a (m, k) and b (k, n)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    return a @ b


def _same_padding(size, k, stride):
    out = -(-size // stride)  # ceil
    total = max((out - 1) * stride + k - size, 0)
    lo = total // 2
    return lo, total - lo


def conv2d_output_hw(h, w, kh, kw, stride, padding):
    """Output spatial extents for the given convolution geometry."""
    if padding == "same":
        ph = sum(_same_padding(h, kh, stride))
        pw = sum(_same_padding(w, kw, stride))
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")
    hp, wp = h + ph, w + pw
    if kh > hp or kw > wp:
        raise ShapeError(
            f"kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})"
        )
    return (hp - kh) // stride + 1, (wp - kw) // stride + 1


def _pad_input(x, kh, kw, stride, padding):
    if padding == "valid":
        return x
    _, _, h, w = x.shape
    pt, pb = _same_padding(h, kh, stride)
    pl, pr = _same_padding(w, kw, stride)
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))


def conv2d(x, k, stride=1, padding="valid"):
    """2-D cross-correlation of x (C, H, W) with kernels k (F, C, kh, kw).

    A 4-D x is treated as a batch (B, C, H, W). No kernel flip is applied.
    """
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d expects (B,C,H,W) and (F,C,kh,kw), got {x.shape}, {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise ShapeError(f"channel mismatch: input {x.shape} vs kernel {k.shape}")
    kh, kw = k.shape[2:]
    conv2d_output_hw(x.shape[2], x.shape[3], kh, kw, stride, padding)  # validates
    xp = _pad_input(x, kh, kw, stride, padding)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    y = np.einsum("bchwij,fcij->bfhw", win, k)
    return y[0] if single else y


def relu(x):
    """Elementwise max(0, x)."""
    return np.maximum(0.0, np.asarray(x, dtype=np.float64))


def softmax(z):
    """Softmax along the last axis, max-shifted for overflow safety."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def global_avg_pool(x):
    """Per-channel spatial mean of x (C, H, W) or (B, C, H, W)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (3, 4):
        raise ShapeError(f"global_avg_pool expects (C,H,W) or (B,C,H,W), got {x.shape}")
    return x.mean(axis=(-2, -1))
