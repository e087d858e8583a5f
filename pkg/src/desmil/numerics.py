"""Dense float64 primitives: seeded RNG streams, init, softmax, Adam, finite differences.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  Random numbers come
from numpy's PCG64 generator; each purpose (init, negatives, batches, splits,
synthetic) owns an independent stream derived from the run seed through
``SeedSequence`` spawn keys, so consuming one stream never perturbs another.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

STREAMS = {
    "init": 0,
    "negatives": 1,
    "batches": 2,
    "splits": 3,
    "synthetic": 4,
}


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """Return the PCG64 generator for ``(seed, stream)``."""
    if stream not in STREAMS:
        raise ValueError(f"unknown rng stream {stream!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[stream],))
    return np.random.Generator(np.random.PCG64(ss))


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def glorot_uniform(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ValueError(f"glorot_uniform needs positive dimensions, got {rows}x{cols}")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param: np.ndarray, **kw) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.beta1, self.beta2, self.eps)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float):
    """One bias-corrected Adam update.  Returns ``(new_param, new_state)``; inputs untouched."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_param, AdamState(m, v, step, state.beta1, state.beta2, state.eps)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (``x`` is restored on return)."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
