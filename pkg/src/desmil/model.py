"""Attentive multi-interest encoder with interest selection and sampled-softmax loss.

A batch of contexts is right-padded to the longest context in the batch and the
padded positions are masked out of the attention softmax, which is the same
computation as running each sequence at its own length.  Gradients are derived
by hand; the interest index chosen by the argmax is a constant of the forward
pass.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .numerics import glorot_uniform, softmax_rows


@dataclass
class Hyperparams:
    vocab: int
    d: int = 64
    d_hat: int | None = None
    c: int = 2
    T: int = 20
    lam: float = 1.0
    negatives: int = 10
    lr: float = 1e-3
    lr_w: float = 1000.0  # batch HSIC gradients are O(1e-4); smaller steps leave weights near 1
    w_steps: int = 1
    sigma: float | None = None  # None selects the median heuristic
    sigma_floor: float = 1e-8
    batch: int = 128
    w_lo: float = 0.0
    w_hi: float = 1.0
    decorrelate: bool = True

    def __post_init__(self):
        if self.d_hat is None:
            self.d_hat = 4 * self.d
        for name in ("vocab", "d", "d_hat", "c", "T", "batch", "w_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 1 <= self.negatives <= self.vocab - 1:
            raise ValueError(f"negatives must be in [1, vocab-1], got {self.negatives} (vocab={self.vocab})")
        if self.lr <= 0 or self.lr_w <= 0:
            raise ValueError("learning rates must be positive")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")
        if self.w_lo > self.w_hi:
            raise ValueError("weight bounds must satisfy w_lo <= w_hi")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


PARAM_NAMES = ("V", "P", "W1", "W2")


@dataclass
class ModelParams:
    V: np.ndarray  # vocab x d item embeddings
    P: np.ndarray  # T x d position embeddings
    W1: np.ndarray  # d_hat x d
    W2: np.ndarray  # c x d_hat

    @classmethod
    def init(cls, hp: Hyperparams, rng: np.random.Generator) -> "ModelParams":
        return cls(
            V=glorot_uniform(hp.vocab, hp.d, rng),
            P=glorot_uniform(hp.T, hp.d, rng),
            W1=glorot_uniform(hp.d_hat, hp.d, rng),
            W2=glorot_uniform(hp.c, hp.d_hat, rng),
        )

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.as_dict().items()})


@dataclass
class Gradients:
    V: np.ndarray
    P: np.ndarray
    W1: np.ndarray
    W2: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}


@dataclass
class ForwardTrace:
    items: np.ndarray
    E: np.ndarray
    A: np.ndarray
    M: np.ndarray
    selected: int
    target: int
    candidate_ids: np.ndarray
    logits: np.ndarray


@dataclass
class BatchTrace:
    ids: np.ndarray  # B x t_max, padded with 0
    mask: np.ndarray  # B x t_max
    E: np.ndarray  # B x t_max x d
    H: np.ndarray  # B x t_max x d_hat
    A: np.ndarray  # B x c x t_max (zero on padding)
    M: np.ndarray  # B x c x d
    selected: np.ndarray  # B
    targets: np.ndarray  # B
    candidates: np.ndarray  # B x (1 + negatives), target first
    logits: np.ndarray  # B x (1 + negatives)

    def __len__(self) -> int:
        return len(self.targets)

    def sample(self, i: int) -> ForwardTrace:
        t = int(self.mask[i].sum())
        return ForwardTrace(
            items=self.ids[i, :t].copy(),
            E=self.E[i, :t].copy(),
            A=self.A[i, :, :t].copy(),
            M=self.M[i].copy(),
            selected=int(self.selected[i]),
            target=int(self.targets[i]),
            candidate_ids=self.candidates[i].copy(),
            logits=self.logits[i].copy(),
        )

    def contexts(self) -> list[np.ndarray]:
        return [self.ids[i, : int(self.mask[i].sum())] for i in range(len(self))]


def _check_items(items: np.ndarray, vocab: int) -> None:
    if items.size and (items.min() < 0 or items.max() >= vocab):
        raise ValueError(f"item id out of range [0, {vocab})")


def embed_sequence(items: Sequence[int], params: ModelParams, hp: Hyperparams) -> np.ndarray:
    items = np.asarray(items, dtype=np.int64)
    if items.size < 1:
        raise ValueError("empty sequence")
    _check_items(items, hp.vocab)
    items = items[-hp.T :]
    return params.V[items] + params.P[: len(items)]


def extract_interests(E: np.ndarray, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    if E.ndim != 2 or E.shape[1] != params.W1.shape[1]:
        raise ValueError(f"E must be t x {params.W1.shape[1]}, got {E.shape}")
    A = softmax_rows(params.W2 @ np.tanh(params.W1 @ E.T))
    return A, A @ E


def select_interest(M: np.ndarray, target_emb: np.ndarray) -> tuple[int, np.ndarray]:
    idx = int(np.argmax(M @ target_emb))  # first maximum wins ties
    return idx, M[idx]


def pad_contexts(contexts: Sequence[Sequence[int]], T: int) -> tuple[np.ndarray, np.ndarray]:
    """Truncate each context to its last ``T`` items and right-pad into an id matrix and mask."""
    trimmed = [np.asarray(c, dtype=np.int64)[-T:] for c in contexts]
    if any(c.size == 0 for c in trimmed):
        raise ValueError("empty context")
    t_max = max(c.size for c in trimmed)
    ids = np.zeros((len(trimmed), t_max), dtype=np.int64)
    mask = np.zeros((len(trimmed), t_max), dtype=bool)
    for i, c in enumerate(trimmed):
        ids[i, : c.size] = c
        mask[i, : c.size] = True
    return ids, mask


def _encode(ids: np.ndarray, mask: np.ndarray, params: ModelParams):
    t_max = ids.shape[1]
    E = params.V[ids] + params.P[:t_max][None, :, :]
    B, _, d = E.shape
    H = np.tanh((E.reshape(-1, d) @ params.W1.T).reshape(B, t_max, -1))
    Z = np.swapaxes(H @ params.W2.T, 1, 2)  # B x c x t
    Z = np.where(mask[:, None, :], Z, -np.inf)
    A = softmax_rows(Z)
    M = A @ E
    return E, H, A, M


def interest_matrices(contexts: Sequence[Sequence[int]], params: ModelParams, hp: Hyperparams) -> np.ndarray:
    """Interest matrices (B x c x d) for a batch of contexts, no target needed."""
    ids, mask = pad_contexts(contexts, hp.T)
    _check_items(ids[mask], hp.vocab)
    return _encode(ids, mask, params)[3]


def sample_negatives(targets: np.ndarray, n: int, vocab: int, rng: np.random.Generator) -> np.ndarray:
    """``[target] + n`` distinct uniform negatives per row, target excluded."""
    if n > vocab - 1:
        raise ValueError(f"cannot draw {n} negatives from a vocabulary of {vocab}")
    out = np.empty((len(targets), n + 1), dtype=np.int64)
    for i, t in enumerate(targets):
        neg = rng.choice(vocab - 1, size=n, replace=False)
        neg[neg >= t] += 1
        out[i, 0] = t
        out[i, 1:] = neg
    return out


def forward_batch(
    contexts: Sequence[Sequence[int]],
    targets: Sequence[int],
    params: ModelParams,
    hp: Hyperparams,
    rng: np.random.Generator | None = None,
    candidates: np.ndarray | None = None,
) -> BatchTrace:
    targets = np.asarray(targets, dtype=np.int64)
    if len(contexts) != len(targets):
        raise ValueError("contexts and targets differ in length")
    ids, mask = pad_contexts(contexts, hp.T)
    _check_items(ids[mask], hp.vocab)
    _check_items(targets, hp.vocab)
    E, H, A, M = _encode(ids, mask, params)
    scores = np.einsum("bcd,bd->bc", M, params.V[targets])
    selected = np.argmax(scores, axis=1)
    R = M[np.arange(len(targets)), selected]
    if candidates is None:
        if rng is None:
            raise ValueError("rng required to sample negatives")
        candidates = sample_negatives(targets, hp.negatives, hp.vocab, rng)
    logits = np.einsum("bd,bkd->bk", R, params.V[candidates])
    return BatchTrace(ids, mask, E, H, A, M, selected, targets, np.asarray(candidates), logits)


def forward(items, target: int, params: ModelParams, hp: Hyperparams, rng: np.random.Generator) -> ForwardTrace:
    return forward_batch([items], [target], params, hp, rng).sample(0)


def _logsumexp(x: np.ndarray) -> np.ndarray:
    mx = x.max(axis=-1, keepdims=True)
    return (mx + np.log(np.exp(x - mx).sum(axis=-1, keepdims=True)))[..., 0]


def sample_loss(trace: ForwardTrace) -> float:
    return float(_logsumexp(trace.logits) - trace.logits[0])


def batch_losses(trace: BatchTrace) -> np.ndarray:
    return _logsumexp(trace.logits) - trace.logits[:, 0]


def weighted_batch_loss(traces, weights) -> float:
    weights = np.asarray(weights, dtype=np.float64)
    if isinstance(traces, BatchTrace):
        losses = batch_losses(traces)
    else:
        losses = np.array([sample_loss(t) for t in traces])
    if len(losses) != len(weights):
        raise ValueError(f"{len(losses)} traces but {len(weights)} weights")
    return float(np.dot(weights, losses))


def _as_batch(traces, params: ModelParams, hp: Hyperparams) -> BatchTrace:
    if isinstance(traces, BatchTrace):
        return traces
    return forward_batch(
        [t.items for t in traces],
        [t.target for t in traces],
        params,
        hp,
        candidates=np.stack([t.candidate_ids for t in traces]),
    )


def backward(traces, weights, params: ModelParams, hp: Hyperparams) -> Gradients:
    """Gradients of ``weighted_batch_loss`` with respect to every parameter tensor."""
    tr = _as_batch(traces, params, hp)
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(tr):
        raise ValueError(f"{len(tr)} traces but {len(w)} weights")
    B = len(tr)
    rows = np.arange(B)

    dV = np.zeros_like(params.V)
    dP = np.zeros_like(params.P)

    probs = softmax_rows(tr.logits)
    dlogits = probs
    dlogits[:, 0] -= 1.0
    dlogits *= w[:, None]

    Vc = params.V[tr.candidates]
    R = tr.M[rows, tr.selected]
    dR = np.einsum("bk,bkd->bd", dlogits, Vc)
    np.add.at(dV, tr.candidates.reshape(-1), (dlogits[:, :, None] * R[:, None, :]).reshape(-1, params.V.shape[1]))

    dM = np.zeros_like(tr.M)
    dM[rows, tr.selected] = dR
    dA = dM @ np.swapaxes(tr.E, 1, 2)  # B x c x t
    dE = np.swapaxes(tr.A, 1, 2) @ dM  # B x t x d
    dZ = tr.A * (dA - (dA * tr.A).sum(axis=-1, keepdims=True))
    dZ_t = np.swapaxes(dZ, 1, 2)  # B x t x c

    c, d_hat, d = params.W2.shape[0], params.W1.shape[0], params.W1.shape[1]
    H2 = tr.H.reshape(-1, d_hat)
    dW2 = dZ_t.reshape(-1, c).T @ H2
    dS = (dZ_t.reshape(-1, c) @ params.W2) * (1.0 - H2 * H2)
    dW1 = dS.T @ tr.E.reshape(-1, d)
    dE += (dS @ params.W1).reshape(dE.shape)

    dE[~tr.mask] = 0.0
    np.add.at(dV, tr.ids[tr.mask], dE[tr.mask])
    dP[: tr.ids.shape[1]] += dE.sum(axis=0)
    return Gradients(V=dV, P=dP, W1=dW1, W2=dW2)
