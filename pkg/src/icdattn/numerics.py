"""Scalar/vector primitives, the seeded RNG and the Adam optimizer.

Everything is float64 numpy. Vectors are 1-d arrays, matrices 2-d row-major
arrays; there are no wrapper classes around them. The elementwise functions
keep any wider float dtype they are given (``np.longdouble`` is used by the
finite-difference tests).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def as_float(x) -> np.ndarray:
    x = np.asarray(x)
    return x if np.issubdtype(x.dtype, np.floating) else x.astype(np.float64)


def sigmoid(x):
    """Logistic function, overflow-free for any finite input (scalar or array)."""
    x = as_float(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def tanh(x):
    x = as_float(x)
    out = np.tanh(x)
    if out.ndim == 0:
        return float(out)
    return out


def softmax(v, axis=-1):
    """Max-shifted softmax. Raises on empty input."""
    v = as_float(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("empty softmax input")
    z = np.exp(v - v.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def matvec(a, x):
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ValueError(f"matvec shape mismatch: {a.shape} @ {x.shape}")
    return a @ x


class Rng:
    """Seeded generator over numpy's PCG64 bit generator.

    PCG64 (O'Neill's permuted congruential generator, 128-bit state, XSL-RR
    output) is specified bit-for-bit, so a seed yields the same stream on any
    platform.
    """

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None):
        if not lo < hi:
            raise ValueError(f"invalid bounds: lo={lo} must be < hi={hi}")
        return self.gen.uniform(lo, hi, size)

    def bernoulli(self, p: float, size=None):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"invalid probability {p}")
        draw = self.gen.random(size) < p
        if size is None:
            return int(draw)
        return draw.astype(np.int8)

    def integers(self, lo: int, hi: int, size=None):
        return self.gen.integers(lo, hi, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def choice(self, seq, p=None):
        return seq[int(self.gen.choice(len(seq), p=p))]

    def spawn(self, offset: int) -> "Rng":
        """Independent child stream, derived deterministically from the seed."""
        return Rng((self.seed * 1_000_003 + offset) % 2**64)

    def state(self) -> dict:
        return self.gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.gen.bit_generator.state = state


def rng_uniform(rng: Rng, lo: float, hi: float) -> float:
    return float(rng.uniform(lo, hi))


def rng_bernoulli(rng: Rng, p: float) -> int:
    return rng.bernoulli(p)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if params.keys() != grads.keys():
        raise ValueError("params and grads have different keys")
    for k, p in params.items():
        if p.shape != grads[k].shape:
            raise ValueError(f"shape mismatch for {k}: {p.shape} vs {grads[k].shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
