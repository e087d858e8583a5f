"""RBF-kernel HSIC and the sample-weighted interest de-correlation loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class KernelConfig:
    sigma: float | None = None  # fixed bandwidth; None means median heuristic
    floor: float = 1e-8

    def __post_init__(self):
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.floor <= 0:
            raise ValueError("floor must be positive")

    def bandwidth(self, X: np.ndarray) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return median_bandwidth(X, self.floor)


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def rbf_kernel(u, v, sigma: float) -> float:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("u and v differ in length")
    diff = u - v
    return float(np.exp(-np.dot(diff, diff) / sigma**2))


def sq_dists(X: np.ndarray) -> np.ndarray:
    sq = np.einsum("id,id->i", X, X)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def gram(X, sigma: float) -> np.ndarray:
    X = _as_points(X)
    return np.exp(-sq_dists(X) / sigma**2)


def median_bandwidth(X, floor: float = 1e-8) -> float:
    """Median pairwise Euclidean distance, never below ``floor``."""
    X = _as_points(X)
    iu = np.triu_indices(len(X), k=1)
    med = float(np.median(np.sqrt(sq_dists(X)[iu])))
    return max(med, floor)


def centered(K: np.ndarray) -> np.ndarray:
    """P K P with P the centering matrix, without forming P."""
    return K - K.mean(axis=0, keepdims=True) - K.mean(axis=1, keepdims=True) + K.mean()


def hsic_from_grams(K: np.ndarray, L: np.ndarray) -> float:
    m = K.shape[0]
    # tr(K P L P) = sum((P K P) * L) for symmetric K, L
    return float(np.sum(centered(K) * L) / (m - 1) ** 2)


def empirical_hsic(U, V, cfg: KernelConfig = KernelConfig()) -> float:
    U = _as_points(U)
    V = _as_points(V)
    if len(U) != len(V):
        raise ValueError("U and V must hold the same number of samples")
    if len(U) < 2:
        raise ValueError("HSIC needs at least two samples")
    return hsic_from_grams(gram(U, cfg.bandwidth(U)), gram(V, cfg.bandwidth(V)))


def _check_batch(M: np.ndarray, w: np.ndarray) -> None:
    if M.ndim != 3:
        raise ValueError("interest batch must be m x c x d")
    if len(M) < 2:
        raise ValueError("HSIC needs at least two samples")
    if len(w) != len(M):
        raise ValueError(f"{len(M)} samples but {len(w)} weights")


def _interest_grams(M: np.ndarray, w: np.ndarray, cfg: KernelConfig):
    grams, sigmas = [], []
    for j in range(M.shape[1]):
        U = w[:, None] * M[:, j, :]
        s = cfg.bandwidth(U)
        sigmas.append(s)
        grams.append(gram(U, s))
    return grams, sigmas


def pairwise_hsic(M: np.ndarray, cfg: KernelConfig = KernelConfig()) -> float:
    """Unweighted sum of HSIC over interest pairs j < k for a batch of interest matrices."""
    M = np.asarray(M, dtype=np.float64)
    return weighted_corr_loss(M, np.ones(len(M)), 1.0, cfg)


def weighted_corr_loss(M, w, lam: float, cfg: KernelConfig = KernelConfig()) -> float:
    M = np.asarray(M, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    _check_batch(M, w)
    c = M.shape[1]
    if lam == 0 or c < 2:
        return 0.0
    grams, _ = _interest_grams(M, w, cfg)
    total = 0.0
    for j in range(c):
        for k in range(j + 1, c):
            total += hsic_from_grams(grams[j], grams[k])
    return lam * total


def corr_loss_grad_weights(M, w, lam: float, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    """Gradient of ``weighted_corr_loss`` in the weights, bandwidths held fixed."""
    M = np.asarray(M, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    _check_batch(M, w)
    m, c, _ = M.shape
    grad = np.zeros(m)
    if lam == 0 or c < 2:
        return grad
    grams, sigmas = _interest_grams(M, w, cfg)
    centered_grams = [centered(K) / (m - 1) ** 2 for K in grams]

    def through(j: int, other: int) -> np.ndarray:
        # d HSIC / d w via the Gram matrix of interest j; d HSIC / d K_j = P K_other P / (m-1)^2
        X = M[:, j, :]
        U = w[:, None] * X
        D = centered_grams[other] * grams[j]
        proj = np.einsum("id,id->i", U, X)
        cross = np.einsum("id,id->i", D @ U, X)
        return (-4.0 / sigmas[j] ** 2) * (D.sum(axis=1) * proj - cross)

    for j in range(c):
        for k in range(j + 1, c):
            grad += through(j, k) + through(k, j)
    return lam * grad


def update_weights(
    w,
    grad: np.ndarray | Callable[[np.ndarray], np.ndarray],
    lr_w: float,
    steps: int = 1,
    bounds: tuple[float, float] = (0.0, 1.0),
) -> np.ndarray:
    """Projected gradient descent on the weights.

    ``grad`` is either a fixed gradient array or a callable re-evaluated at every step.
    """
    lo, hi = bounds
    if lo > hi:
        raise ValueError("bounds must satisfy lo <= hi")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    w = np.asarray(w, dtype=np.float64).copy()
    for _ in range(steps):
        g = grad(w) if callable(grad) else np.asarray(grad, dtype=np.float64)
        w = np.clip(w - lr_w * g, lo, hi)
    return w
