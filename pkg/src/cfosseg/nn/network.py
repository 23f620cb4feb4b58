"""Layer specs and the sequential-with-skips network container.

A network is an ordered layer list; layer i consumes layer i-1's output
(the network input for i=0). A concat layer additionally consumes the
recorded output of an earlier layer named by its skip_ref index, which is
how U-Net skip connections are expressed without a general graph.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import Concat, Conv, MaxPool2, ReLU, Sigmoid, UpConv2, Upsample2, check_finite

CONV_KINDS = {"conv3x3": 3, "conv1x1": 1}
PARAMFREE_KINDS = ("maxpool2", "upsample2", "relu", "sigmoid")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    skip_ref: int | None = None

    def kernel(self) -> int:
        if self.kind in CONV_KINDS:
            return CONV_KINDS[self.kind]
        if self.kind == "upconv2":
            return 2
        return 0

    def weight_count(self) -> int:
        k = self.kernel()
        return k * k * self.in_channels * self.out_channels if k else 0

    def bias_count(self) -> int:
        return self.out_channels if self.kernel() else 0

    def validate(self, index: int) -> None:
        if self.kind in CONV_KINDS or self.kind == "upconv2":
            if self.in_channels < 1 or self.out_channels < 1:
                raise ValueError(f"layer {index} ({self.kind}): channel counts must be >= 1")
        elif self.kind == "concat":
            if self.skip_ref is None or self.skip_ref >= index:
                raise ValueError(f"layer {index}: concat skip_ref must name an earlier layer")
        elif self.kind not in PARAMFREE_KINDS:
            raise ValueError(f"layer {index}: unknown layer kind {self.kind!r}")


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _instantiate(spec: LayerSpec, rng: np.random.Generator, dtype):
    if spec.kind in CONV_KINDS:
        k = CONV_KINDS[spec.kind]
        w = _he_uniform(rng, (k, k, spec.in_channels, spec.out_channels),
                        k * k * spec.in_channels, dtype)
        return Conv(w, np.zeros(spec.out_channels, dtype=dtype))
    if spec.kind == "upconv2":
        w = _he_uniform(rng, (2, 2, spec.in_channels, spec.out_channels),
                        4 * spec.in_channels, dtype)
        return UpConv2(w, np.zeros(spec.out_channels, dtype=dtype))
    return {
        "maxpool2": MaxPool2,
        "upsample2": Upsample2,
        "relu": ReLU,
        "sigmoid": Sigmoid,
        "concat": Concat,
    }[spec.kind]()


class Network:
    """Fixed layer stack with exact reverse-mode gradients.

    Training loops own a network exclusively; prediction-only use is
    read-only and may be shared across threads.
    """

    def __init__(self, specs: list[LayerSpec], seed: int = 0, dtype=np.float32):
        for i, s in enumerate(specs):
            s.validate(i)
        self.specs = list(specs)
        self.rng_seed = seed
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.layers = [_instantiate(s, rng, dtype) for s in self.specs]
        self.outputs: list[np.ndarray] | None = None

    def forward(self, x: np.ndarray, train: bool = False, upto: int | None = None) -> np.ndarray:
        """Run the stack; `upto` stops after that many layers (encoder halves)."""
        if x.ndim != 4:
            raise ValueError(f"network input must be rank 4, got shape {x.shape}")
        x = np.ascontiguousarray(x, dtype=self.dtype)
        end = len(self.layers) if upto is None else upto
        outputs: list[np.ndarray] = []
        cur = x
        for spec, layer in zip(self.specs[:end], self.layers[:end]):
            if spec.kind == "concat":
                cur = layer.forward(cur, outputs[spec.skip_ref], train=train)
            else:
                cur = layer.forward(cur, train=train)
            outputs.append(cur)
        self.outputs = outputs if (train and upto is None) else None
        check_finite(cur, "network output")
        return cur

    def backward(self, dloss_dout: np.ndarray) -> np.ndarray:
        """Propagate the loss gradient; returns d(loss)/d(input)."""
        if self.outputs is None:
            raise RuntimeError("backward called without a prior training forward pass")
        n = len(self.layers)
        pending: dict[int, np.ndarray] = {n - 1: np.asarray(dloss_dout, dtype=self.dtype)}
        dinput = None
        for i in range(n - 1, -1, -1):
            g = pending.pop(i, None)
            if g is None:
                raise RuntimeError(f"no gradient reached layer {i} ({self.specs[i].kind})")
            spec, layer = self.specs[i], self.layers[i]
            if spec.kind == "concat":
                g_prev, g_skip = layer.backward(g)
                ref = spec.skip_ref
                pending[ref] = pending.get(ref, 0) + g_skip
            else:
                g_prev = layer.backward(g)
            if i == 0:
                dinput = g_prev
            else:
                prev = i - 1
                pending[prev] = pending.get(prev, 0) + g_prev
        self.outputs = None
        return dinput

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]

    def clone(self) -> "Network":
        other = Network(self.specs, seed=self.rng_seed, dtype=self.dtype)
        for mine, theirs in zip(self.params(), other.params()):
            theirs[...] = mine
        return other

    def astype(self, dtype) -> "Network":
        other = Network(self.specs, seed=self.rng_seed, dtype=dtype)
        for mine, theirs in zip(self.params(), other.params()):
            theirs[...] = mine.astype(dtype)
        return other
