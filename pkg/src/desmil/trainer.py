"""Alternating training: Adam on the weighted next-item loss, then projected gradient
descent on per-sample weights against the interest correlation loss."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .data import Dataset, make_training_example
from .evaluation import CurveLog, evaluate, log_curves
from .hsic import KernelConfig, corr_loss_grad_weights, update_weights
from .model import PARAM_NAMES, Hyperparams, ModelParams, backward, forward_batch, interest_matrices
from .numerics import AdamState, adam_step, make_rng, rng_from_state, rng_state

log = logging.getLogger(__name__)

Key = tuple[int, int]


class WeightTable:
    """Per-sample weights keyed by ``(user, cut)``; unseen keys read as 1.0."""

    def __init__(self, values: dict[Key, float] | None = None):
        self._w: dict[Key, float] = dict(values or {})

    def get(self, key: Key) -> float:
        return self._w.get(key, 1.0)

    def get_many(self, keys) -> np.ndarray:
        return np.array([self._w.get(k, 1.0) for k in keys], dtype=np.float64)

    def set_many(self, keys, values) -> None:
        for k, v in zip(keys, values):
            self._w[k] = float(v)

    def as_dict(self) -> dict[Key, float]:
        return dict(self._w)

    def values(self) -> list[float]:
        return list(self._w.values())

    def __len__(self) -> int:
        return len(self._w)


@dataclass
class TrainState:
    hp: Hyperparams
    params: ModelParams
    adam: dict[str, AdamState]
    weights: WeightTable
    rngs: dict[str, np.random.Generator]
    q: int = 0
    epoch: int = 0
    best_metric: float = -math.inf
    best_q: int = 0
    best_params: ModelParams | None = None
    best_weights: dict[Key, float] = field(default_factory=dict)
    patience_left: int | None = None
    stopped: bool = False
    curve: CurveLog = field(default_factory=CurveLog)
    history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def kernel(self) -> KernelConfig:
        return KernelConfig(self.hp.sigma, self.hp.sigma_floor)

    def best_checkpoint(self) -> Checkpoint:
        params = self.best_params if self.best_params is not None else self.params
        return Checkpoint(
            hyperparams=self.hp.to_dict(),
            tensors={f"params.{k}": v.copy() for k, v in params.as_dict().items()},
            tables={"weights": dict(self.best_weights if self.best_params is not None else self.weights.as_dict())},
            rng_states={k: rng_state(r) for k, r in self.rngs.items()},
            q=self.best_q if self.best_params is not None else self.q,
            meta={"kind": "best", "metric": None if self.best_metric == -math.inf else self.best_metric},
        )

    def to_checkpoint(self) -> Checkpoint:
        """Full resumable state."""
        tensors = {f"params.{k}": v for k, v in self.params.as_dict().items()}
        for k, st in self.adam.items():
            tensors[f"adam.m.{k}"] = st.m
            tensors[f"adam.v.{k}"] = st.v
        if self.best_params is not None:
            tensors.update({f"best.{k}": v for k, v in self.best_params.as_dict().items()})
        return Checkpoint(
            hyperparams=self.hp.to_dict(),
            tensors={k: v.copy() for k, v in tensors.items()},
            tables={"weights": self.weights.as_dict(), "best_weights": dict(self.best_weights)},
            rng_states={k: rng_state(r) for k, r in self.rngs.items()},
            q=self.q,
            meta={
                "kind": "state",
                "adam_steps": {k: st.step for k, st in self.adam.items()},
                "epoch": self.epoch,
                "best_metric": None if self.best_metric == -math.inf else self.best_metric,
                "best_q": self.best_q,
                "patience_left": self.patience_left,
                "stopped": self.stopped,
                "curve": self.curve.to_rows(),
                "history": self.history,
            },
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "TrainState":
        hp = Hyperparams.from_dict(ckpt.hyperparams)
        t = ckpt.tensors
        params = ModelParams(**{k: t[f"params.{k}"].copy() for k in PARAM_NAMES})
        meta = ckpt.meta
        if meta.get("kind") != "state":
            # a best-only checkpoint: fresh optimizer state around the stored parameters
            return cls(
                hp=hp,
                params=params,
                adam={k: AdamState.zeros_like(v) for k, v in params.as_dict().items()},
                weights=WeightTable(ckpt.tables.get("weights")),
                rngs={k: rng_from_state(s) for k, s in ckpt.rng_states.items()},
                q=ckpt.q,
            )
        adam = {
            k: AdamState(t[f"adam.m.{k}"].copy(), t[f"adam.v.{k}"].copy(), meta["adam_steps"][k]) for k in PARAM_NAMES
        }
        best = None
        if f"best.{PARAM_NAMES[0]}" in t:
            best = ModelParams(**{k: t[f"best.{k}"].copy() for k in PARAM_NAMES})
        return cls(
            hp=hp,
            params=params,
            adam=adam,
            weights=WeightTable(ckpt.tables["weights"]),
            rngs={k: rng_from_state(s) for k, s in ckpt.rng_states.items()},
            q=ckpt.q,
            epoch=meta["epoch"],
            best_metric=-math.inf if meta["best_metric"] is None else meta["best_metric"],
            best_q=meta["best_q"],
            best_params=best,
            best_weights=ckpt.tables.get("best_weights", {}),
            patience_left=meta["patience_left"],
            stopped=meta["stopped"],
            curve=CurveLog.from_rows(meta["curve"]),
            history=[tuple(h) for h in meta["history"]],
        )


def init_state(hp: Hyperparams, seed: int) -> TrainState:
    params = ModelParams.init(hp, make_rng(seed, "init"))
    return TrainState(
        hp=hp,
        params=params,
        adam={k: AdamState.zeros_like(v) for k, v in params.as_dict().items()},
        weights=WeightTable(),
        rngs={"negatives": make_rng(seed, "negatives"), "batches": make_rng(seed, "batches")},
    )


def train_step(state: TrainState, batch, log_hsic: bool = True) -> TrainState:
    """One iteration on ``batch`` (a list of ``(context, target, key)``)."""
    hp = state.hp
    contexts = [b[0] for b in batch]
    targets = [b[1] for b in batch]
    keys = [b[2] for b in batch]
    state.q += 1

    # theta step with the weights as they stood before this iteration
    w = state.weights.get_many(keys)
    trace = forward_batch(contexts, targets, state.params, hp, state.rngs["negatives"])
    grads = backward(trace, w, state.params, hp)
    new = {}
    for name, g in grads.as_dict().items():
        new[name], state.adam[name] = adam_step(getattr(state.params, name), g, state.adam[name], hp.lr)
        if not np.isfinite(new[name]).all():
            raise FloatingPointError(f"non-finite values in {name} after step {state.q}")
    state.params = ModelParams(**new)

    if len(batch) < 2:
        log.warning("batch of size %d at step %d: skipping the weight update", len(batch), state.q)
        return state

    # weight step with theta fixed
    M = interest_matrices(contexts, state.params, hp)
    cfg = state.kernel
    if hp.decorrelate:
        w_new = update_weights(
            w,
            lambda ww: corr_loss_grad_weights(M, ww, hp.lam, cfg),
            hp.lr_w,
            hp.w_steps,
            (hp.w_lo, hp.w_hi),
        )
        state.weights.set_many(keys, w_new)
    if log_hsic:
        log_curves(state.curve, state.q, M, cfg)
    return state


def epoch_batches(ds: Dataset, state: TrainState, users: list[int]):
    rng = state.rngs["batches"]
    examples = [make_training_example(u, ds.sequences[u], rng, state.hp.T) for u in users]
    order = rng.permutation(len(examples))
    examples = [examples[i] for i in order]
    b = state.hp.batch
    return [examples[i : i + b] for i in range(0, len(examples), b)]


def _validate(state: TrainState, ds: Dataset, valid_users: list[int], patience: int | None) -> float:
    metric = evaluate(state.params, state.hp, ds, "valid", p_list=(50,), users=valid_users).recall[50]
    state.history.append((state.q, metric))
    if state.curve.steps and state.curve.steps[-1] == state.q:
        state.curve.set_recall(state.q, metric)
    if metric > state.best_metric:
        state.best_metric = metric
        state.best_q = state.q
        state.best_params = state.params.copy()
        state.best_weights = state.weights.as_dict()
        state.patience_left = patience
    elif patience is not None:
        state.patience_left -= 1
        if state.patience_left <= 0:
            state.stopped = True
    log.info("step %d: valid Recall@50 = %.4f (best %.4f at %d)", state.q, metric, state.best_metric, state.best_q)
    return metric


def fit_state(
    ds: Dataset,
    hp: Hyperparams,
    seed: int,
    eval_every: int | None = None,
    patience: int | None = 3,
    max_epochs: int = 50,
    state: TrainState | None = None,
    on_epoch_end=None,
) -> TrainState:
    """Run (or resume) training and return the final state; ``state.best_checkpoint()``
    holds the parameters with the highest validation Recall@50."""
    train_users = [u for u in ds.users_in("train") if len(ds.sequences[u]) >= 2]
    if not train_users:
        raise ValueError("empty training split")
    valid_users = ds.users_in("valid")
    if not valid_users:
        raise ValueError("empty validation split")

    if state is None:
        state = init_state(hp, seed)
        _validate(state, ds, valid_users, patience)
    while not state.stopped and state.epoch < max_epochs:
        for batch in epoch_batches(ds, state, train_users):
            train_step(state, batch)
            if eval_every and state.q % eval_every == 0:
                _validate(state, ds, valid_users, patience)
                if state.stopped:
                    break
        state.epoch += 1
        if not eval_every and not state.stopped:
            _validate(state, ds, valid_users, patience)
        if on_epoch_end is not None:
            on_epoch_end(state)
    return state


def fit(ds: Dataset, hp: Hyperparams, seed: int, eval_every: int | None = None, patience: int | None = 3,
        max_epochs: int = 50) -> Checkpoint:
    return fit_state(ds, hp, seed, eval_every, patience, max_epochs).best_checkpoint()
