"""Multi-interest top-p retrieval, Recall/NDCG/HR, and the HSIC curve and weight-histogram exports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, eval_examples
from .hsic import KernelConfig, pairwise_hsic
from .model import Hyperparams, ModelParams, interest_matrices

P_LIST = (20, 50)


def _rank(scores: np.ndarray) -> np.ndarray:
    # descending score, lower item id first on ties
    return np.argsort(-scores, kind="stable")


def retrieve_from_interests(M: np.ndarray, V: np.ndarray, context, p: int) -> list[int]:
    vocab = V.shape[0]
    if p > vocab:
        raise ValueError(f"p={p} exceeds vocabulary size {vocab}")
    scores = M @ V.T  # c x vocab
    excluded = np.zeros(vocab, dtype=bool)
    excluded[np.asarray(context, dtype=np.int64)] = True
    scores = np.where(excluded[None, :], -np.inf, scores)
    n_avail = int(vocab - excluded.sum())
    k = min(p, n_avail)
    pool: set[int] = set()
    for row in scores:
        pool.update(_rank(row)[:k].tolist())
    cand = np.array(sorted(pool), dtype=np.int64)
    final = scores[:, cand].max(axis=0)
    return cand[_rank(final)[:k]].tolist()


def retrieve_top_p(params: ModelParams, hp: Hyperparams, context, p: int) -> list[int]:
    """Top-p items by max inner product over the user's interests, context items excluded."""
    if len(context) == 0:
        raise ValueError("empty context")
    M = interest_matrices([context], params, hp)[0]
    return retrieve_from_interests(M, params.V, context, p)


def recall_at(recommended, truth, p: int) -> float:
    if not truth:
        return 0.0
    return len(set(recommended[:p]) & set(truth)) / len(truth)


def ndcg_at(recommended, truth, p: int) -> float:
    if not truth:
        return 0.0
    dcg = sum(1.0 / math.log2(r + 2) for r, i in enumerate(recommended[:p]) if i in truth)
    idcg = sum(1.0 / math.log2(r + 2) for r in range(min(p, len(truth))))
    return dcg / idcg


def hr_at(recommended, truth, p: int) -> float:
    return 1.0 if set(recommended[:p]) & set(truth) else 0.0


@dataclass
class MetricsReport:
    split: str
    n_users: int
    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    hr: dict[int, float] = field(default_factory=dict)
    env: str = ""

    def rows(self) -> list[list]:
        return [[self.split, p, self.recall[p], self.ndcg[p], self.hr[p], self.n_users] + ([self.env] if self.env else [])
                for p in sorted(self.recall)]


def evaluate(
    params: ModelParams,
    hp: Hyperparams,
    ds: Dataset,
    split: str,
    p_list=P_LIST,
    users: list[int] | None = None,
    chunk: int = 512,
) -> MetricsReport:
    if users is None:
        users = ds.users_in(split)
    if not users:
        raise ValueError(f"split {split!r} has no users")
    p_max = max(p_list)
    sums = {name: {p: 0.0 for p in p_list} for name in ("recall", "ndcg", "hr")}
    n = 0
    examples = [eval_examples(ds.sequences[u], hp.T) for u in users]
    for start in range(0, len(examples), chunk):
        part = examples[start : start + chunk]
        Ms = interest_matrices([ctx for ctx, _ in part], params, hp)
        for (ctx, truth), M in zip(part, Ms):
            if not truth:
                continue
            recs = retrieve_from_interests(M, params.V, ctx, p_max)
            for p in p_list:
                sums["recall"][p] += recall_at(recs, truth, p)
                sums["ndcg"][p] += ndcg_at(recs, truth, p)
                sums["hr"][p] += hr_at(recs, truth, p)
            n += 1
    if n == 0:
        raise ValueError(f"split {split!r} has no users with ground truth")
    envs = {ds.env.get(u, "") for u in users}
    return MetricsReport(
        split=split,
        n_users=n,
        recall={p: v / n for p, v in sums["recall"].items()},
        ndcg={p: v / n for p, v in sums["ndcg"].items()},
        hr={p: v / n for p, v in sums["hr"].items()},
        env="+".join(sorted(envs)) if envs != {""} else "",
    )


def write_metrics(reports: list[MetricsReport], path) -> None:
    with_env = any(r.env for r in reports)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "p", "recall", "ndcg", "hr", "n_users"] + (["env"] if with_env else []))
        for r in reports:
            for row in r.rows():
                if with_env and not r.env:
                    row.append("")
                w.writerow([f"{x:.10f}" if isinstance(x, float) else x for x in row])


# ---------------------------------------------------------------------------
# training diagnostics


@dataclass
class CurveLog:
    steps: list[int] = field(default_factory=list)
    hsic: list[float] = field(default_factory=list)
    recall50: list[float | None] = field(default_factory=list)

    def record(self, step: int, hsic: float, recall50: float | None = None) -> None:
        if self.steps and step <= self.steps[-1]:
            raise ValueError(f"curve steps must increase: {step} after {self.steps[-1]}")
        self.steps.append(step)
        self.hsic.append(hsic)
        self.recall50.append(recall50)

    def set_recall(self, step: int, recall50: float) -> None:
        if not self.steps or self.steps[-1] != step:
            raise ValueError(f"no curve entry for step {step}")
        self.recall50[-1] = recall50

    def to_rows(self) -> list[list]:
        return [list(r) for r in zip(self.steps, self.hsic, self.recall50)]

    @classmethod
    def from_rows(cls, rows) -> "CurveLog":
        log = cls()
        for s, h, r in rows:
            log.record(int(s), float(h), None if r is None else float(r))
        return log

    def write_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "hsic", "recall50"])
            for s, h, r in zip(self.steps, self.hsic, self.recall50):
                w.writerow([s, repr(float(h)), "" if r is None else repr(float(r))])


def log_curves(log: CurveLog, step: int, M: np.ndarray, cfg: KernelConfig, recall50: float | None = None) -> float:
    """Record the unweighted pairwise-interest HSIC of a batch (weights are ignored)."""
    value = pairwise_hsic(M, cfg)
    log.record(step, value, recall50)
    return value


def weight_histogram(values, bins: int = 20, lo: float = 0.0, hi: float = 1.0):
    values = np.asarray(list(values), dtype=np.float64)
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts


def write_weight_histogram(values, path, bins: int = 20) -> None:
    edges, counts = weight_histogram(values, bins)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for a, b, n in zip(edges[:-1], edges[1:], counts):
            w.writerow([f"{a:.2f}", f"{b:.2f}", int(n)])
