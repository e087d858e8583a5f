"""Seeded lambda ablation on synthetic shift data."""

from __future__ import annotations

import dataclasses
import logging

from .data import SyntheticConfig, generate_synthetic
from .evaluation import evaluate
from .model import Hyperparams
from .trainer import TrainState, fit_state

log = logging.getLogger(__name__)


def run_ablation(
    synth: SyntheticConfig,
    hp_overrides: dict,
    seeds=range(5),
    lams=(0.0, 1.0),
    max_epochs: int = 50,
    patience: int | None = 3,
    eval_every: int | None = None,
):
    """Train one model per (seed, lambda) and score the best checkpoint on valid and test.

    Returns ``(rows, curves)`` where ``curves[(seed, lam)]`` is the run's CurveLog.
    """
    rows, curves = [], {}
    for seed in seeds:
        ds, _ = generate_synthetic(dataclasses.replace(synth, seed=seed))
        for lam in lams:
            hp = Hyperparams(vocab=ds.vocab, **{**hp_overrides, "lam": lam})
            state = fit_state(ds, hp, seed, eval_every=eval_every, patience=patience, max_epochs=max_epochs)
            best = TrainState.from_checkpoint(state.best_checkpoint()).params
            valid = evaluate(best, hp, ds, "valid")
            test = evaluate(best, hp, ds, "test")
            rows.append({
                "seed": seed,
                "lam": lam,
                "epochs": state.epoch,
                "best_step": state.best_q,
                "valid_recall20": valid.recall[20],
                "valid_recall50": valid.recall[50],
                "test_recall20": test.recall[20],
                "test_recall50": test.recall[50],
            })
            curves[(seed, lam)] = state.curve
            log.info("seed %d lam %g: valid R@20 %.4f, test R@20 %.4f", seed, lam, valid.recall[20], test.recall[20])
    return rows, curves


def relative_change(rows, key: str, lam_a: float, lam_b: float) -> float:
    """(mean over seeds at lam_b) / (mean at lam_a) - 1."""
    a = [r[key] for r in rows if r["lam"] == lam_a]
    b = [r[key] for r in rows if r["lam"] == lam_b]
    return (sum(b) / len(b)) / (sum(a) / len(a)) - 1.0


def hsic_below_counts(curve_treated, curve_base, warmup: float = 0.2) -> tuple[int, int]:
    """(steps where the treated HSIC is lower, steps compared) over shared logged steps after the warm-up."""
    base = dict(zip(curve_base.steps, curve_base.hsic))
    shared = [(s, h) for s, h in zip(curve_treated.steps, curve_treated.hsic) if s in base]
    tail = shared[int(warmup * len(shared)):]
    return sum(h < base[s] for s, h in tail), len(tail)


def hsic_below_fraction(curve_treated, curve_base, warmup: float = 0.2) -> float:
    below, total = hsic_below_counts(curve_treated, curve_base, warmup)
    return below / total if total else 0.0
