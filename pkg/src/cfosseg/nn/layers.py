"""Differentiable layers over rank-4 arrays shaped (batch, height, width, channels).

Convolutions use same padding exclusively, so spatial dims are preserved.
Each layer keeps whatever intermediates its backward pass needs when the
forward pass runs with train=True; prediction passes cache nothing.

3x3 convolution is evaluated as one GEMM over row-window patches: every
output pixel's receptive field is gathered as three contiguous runs of
3*channels floats, which keeps the gather memcpy-friendly and leaves the
heavy lifting to BLAS.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


class NumericError(ArithmeticError):
    """Raised when a non-finite value shows up in network math."""


def check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced in {where}")


def _require_cache(cache, layer):
    if cache is None:
        raise RuntimeError(f"{type(layer).__name__}.backward called without a prior training forward pass")
    return cache


def _pad1(x: np.ndarray) -> np.ndarray:
    b, h, w, c = x.shape
    out = np.zeros((b, h + 2, w + 2, c), dtype=x.dtype)
    out[:, 1:1 + h, 1:1 + w] = x
    return out


def _rowwin_patches(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    """(B*h*w, 9*C) patch matrix from a padded (B, h+2, w+2, C) array.

    Row layout is (dy, dx, c) row-major, matching weights.reshape(9*C, F).
    """
    b, _, _, c = xp.shape
    sb, sh, sw, sc = xp.strides
    view = as_strided(xp, shape=(b, h, w, 3, 3 * c), strides=(sb, sh, sw, sh, sc))
    return view.reshape(b * h * w, 9 * c)


class Conv:
    """k x k same-padding convolution, k in {1, 3}, with bias."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        k = weights.shape[0]
        if weights.ndim != 4 or weights.shape[1] != k or k not in (1, 3):
            raise ValueError(f"conv weights must be (k,k,in,out) with k in {{1,3}}, got {weights.shape}")
        if bias.shape != (weights.shape[3],):
            raise ValueError(f"bias shape {bias.shape} does not match {weights.shape[3]} filters")
        self.w = weights
        self.b = bias
        self.k = k
        self._cache = None

    @property
    def params(self):
        return [self.w, self.b]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        b, h, w, c = x.shape
        if c != self.w.shape[2]:
            raise ValueError(f"input has {c} channels, conv expects {self.w.shape[2]}")
        f = self.w.shape[3]
        if self.k == 1:
            flat = x.reshape(-1, c)
            out = flat @ self.w[0, 0] + self.b
            self._cache = (flat, (b, h, w, c)) if train else None
            return out.reshape(b, h, w, f)
        patches = _rowwin_patches(_pad1(x), h, w)
        out = patches @ self.w.reshape(9 * c, f)
        out += self.b
        self._cache = (patches, (b, h, w, c)) if train else None
        return out.reshape(b, h, w, f)

    def backward(self, dout: np.ndarray):
        cached, (b, h, w, c) = _require_cache(self._cache, self)
        self._cache = None
        f = self.w.shape[3]
        dflat = dout.reshape(-1, f)
        self.db = dflat.sum(axis=0)
        if self.k == 1:
            self.dw = (cached.T @ dflat).reshape(1, 1, c, f)
            return (dflat @ self.w[0, 0].T).reshape(b, h, w, c)
        self.dw = (cached.T @ dflat).reshape(3, 3, c, f)
        # dx is the full correlation of dout with the flipped kernel
        wflip = self.w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(9 * f, c)
        dpatches = _rowwin_patches(_pad1(dout), h, w)
        return (dpatches @ np.ascontiguousarray(wflip)).reshape(b, h, w, c)

    @property
    def grads(self):
        return [self.dw, self.db]


class MaxPool2:
    """2x2 max pooling, stride 2. Ties go to the first block cell in row-major order."""

    params: list = []
    grads: list = []

    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
        blocks = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
        blocks = blocks.reshape(b, h // 2, w // 2, 4, c)
        arg = blocks.argmax(axis=3)
        out = np.take_along_axis(blocks, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        self._cache = (arg, (b, h, w, c)) if train else None
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        arg, (b, h, w, c) = _require_cache(self._cache, self)
        self._cache = None
        scat = np.zeros((b, h // 2, w // 2, 4, c), dtype=dout.dtype)
        np.put_along_axis(scat, arg[:, :, :, None, :], dout[:, :, :, None, :], axis=3)
        return scat.reshape(b, h // 2, w // 2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)


class UpConv2:
    """2x2 transposed convolution with stride 2: doubles spatial dims."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        if weights.ndim != 4 or weights.shape[:2] != (2, 2):
            raise ValueError(f"upconv weights must be (2,2,in,out), got {weights.shape}")
        if bias.shape != (weights.shape[3],):
            raise ValueError("bias shape mismatch")
        self.w = weights
        self.b = bias
        self._cache = None

    @property
    def params(self):
        return [self.w, self.b]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        b, h, w, c = x.shape
        if c != self.w.shape[2]:
            raise ValueError(f"input has {c} channels, upconv expects {self.w.shape[2]}")
        f = self.w.shape[3]
        flat = x.reshape(-1, c)
        out = np.empty((b, 2 * h, 2 * w, f), dtype=x.dtype)
        for dy in range(2):
            for dx in range(2):
                out[:, dy::2, dx::2, :] = (flat @ self.w[dy, dx]).reshape(b, h, w, f)
        out += self.b
        self._cache = (flat, (b, h, w, c)) if train else None
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        flat, (b, h, w, c) = _require_cache(self._cache, self)
        self._cache = None
        f = self.w.shape[3]
        self.dw = np.empty_like(self.w)
        self.db = dout.sum(axis=(0, 1, 2))
        dx = np.zeros((b * h * w, c), dtype=dout.dtype)
        for dy in range(2):
            for dx_ in range(2):
                sub = np.ascontiguousarray(dout[:, dy::2, dx_::2, :]).reshape(-1, f)
                self.dw[dy, dx_] = flat.T @ sub
                dx += sub @ self.w[dy, dx_].T
        return dx.reshape(b, h, w, c)

    @property
    def grads(self):
        return [self.dw, self.db]


class Upsample2:
    """Parameter-free 2x nearest-neighbor upsampling."""

    params: list = []
    grads: list = []

    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._cache = x.shape if train else None
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        b, h, w, c = _require_cache(self._cache, self)
        self._cache = None
        return dout.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4))


class ReLU:
    params: list = []
    grads: list = []

    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        out = np.maximum(x, 0)
        self._cache = (x > 0) if train else None
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        mask = _require_cache(self._cache, self)
        self._cache = None
        return dout * mask


class Sigmoid:
    params: list = []
    grads: list = []

    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._cache = out if train else None
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        y = _require_cache(self._cache, self)
        self._cache = None
        return dout * y * (1.0 - y)


class Concat:
    """Channel concatenation of the running activation with a skip activation."""

    params: list = []
    grads: list = []

    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray, skip: np.ndarray, train: bool = False) -> np.ndarray:
        if x.shape[:3] != skip.shape[:3]:
            raise ValueError(
                f"concat operands must share batch/spatial dims, got {x.shape} vs {skip.shape}"
            )
        self._cache = x.shape[3] if train else None
        return np.concatenate([x, skip], axis=3)

    def backward(self, dout: np.ndarray):
        c1 = _require_cache(self._cache, self)
        self._cache = None
        return dout[..., :c1], dout[..., c1:]
