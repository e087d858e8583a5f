"""Interaction loading, user-level splits, example construction and the synthetic shift generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .numerics import make_rng

SPLITS = ("train", "valid", "test")


class DataError(ValueError):
    """Malformed or insufficient input data."""


@dataclass
class Dataset:
    sequences: dict[int, np.ndarray]  # user -> dense item ids in time order
    vocab: int
    split: dict[int, str] = field(default_factory=dict)
    env: dict[int, str] = field(default_factory=dict)
    item_ids: list | None = None  # dense id -> raw id, when loaded from file

    @property
    def users(self) -> list[int]:
        return sorted(self.sequences)

    def users_in(self, split: str) -> list[int]:
        return sorted(u for u, s in self.split.items() if s == split)

    def with_split(self, split: dict[int, str], env: dict[int, str] | None = None) -> "Dataset":
        unknown = set(split) - set(self.sequences)
        if unknown:
            raise DataError(f"split mentions unknown users, e.g. {sorted(unknown)[:3]}")
        bad = {s for s in split.values() if s not in SPLITS}
        if bad:
            raise DataError(f"unknown split labels {sorted(bad)}")
        return Dataset(self.sequences, self.vocab, dict(split), dict(env if env is not None else self.env), self.item_ids)


@dataclass
class SyntheticTruth:
    stable: dict[int, int]
    noisy: dict[int, int]


@dataclass
class SyntheticConfig:
    K_s: int = 4
    K_n: int = 4
    items_per_topic: int = 50
    train_users: int = 2000
    valid_users: int = 250
    test_users: int = 500
    seq_len: int = 20
    pi: float = 0.6
    rho_train: float = 0.9
    rho_test: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.K_s != self.K_n:
            raise ValueError("paired coupling needs K_s == K_n")
        if self.K_s < 2:
            raise ValueError("need at least two topics per kind")
        for name in ("pi", "rho_train", "rho_test"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.items_per_topic < 1 or self.seq_len < 2:
            raise ValueError("items_per_topic >= 1 and seq_len >= 2 required")

    def stable_pool(self, topic: int) -> np.ndarray:
        return np.arange(topic * self.items_per_topic, (topic + 1) * self.items_per_topic)

    def noisy_pool(self, topic: int) -> np.ndarray:
        return self.stable_pool(self.K_s + topic)


# ---------------------------------------------------------------------------
# file formats


def load_interactions(path, min_len: int = 5) -> Dataset:
    """Read ``user_id,item_id,timestamp`` lines into per-user time-ordered sequences."""
    path = Path(path)
    rows: list[tuple[int, int, int, int]] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                if len(parts) != 3:
                    raise ValueError
                user, item, ts = (int(p) for p in parts)
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header
                raise DataError(f"{path}:{lineno}: expected 'user_id,item_id,timestamp', got {line!r}")
            if user < 0 or item < 0:
                raise DataError(f"{path}:{lineno}: negative id")
            rows.append((user, ts, item, lineno))
    if not rows:
        raise DataError(f"{path}: no interactions")

    # sort by (user, ts, item) so the result does not depend on line order
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    raw: dict[int, list[int]] = {}
    for user, _, item, _ in rows:
        raw.setdefault(user, []).append(item)
    raw = {u: s for u, s in raw.items() if len(s) >= min_len}
    if not raw:
        raise DataError(f"{path}: no user has at least {min_len} interactions")

    item_ids = sorted({i for s in raw.values() for i in s})
    index = {raw_id: k for k, raw_id in enumerate(item_ids)}
    sequences = {u: np.array([index[i] for i in s], dtype=np.int64) for u, s in raw.items()}
    return Dataset(sequences, len(item_ids), item_ids=item_ids)


def write_interactions(ds: Dataset, path) -> None:
    """Write the canonical form: sorted by user, timestamps are sequence positions."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for u in ds.users:
            for t, i in enumerate(ds.sequences[u]):
                w.writerow([u, ds.item_ids[i] if ds.item_ids is not None else int(i), t])


def write_split(ds: Dataset, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for u in sorted(ds.split):
            row = [u, ds.split[u]]
            if ds.env:
                row.append(ds.env.get(u, ""))
            w.writerow(row)


def read_split(path) -> tuple[dict[int, str], dict[int, str]]:
    split, env = {}, {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) not in (2, 3) or row[1] not in SPLITS:
                raise DataError(f"{path}:{lineno}: expected 'user_id,split[,env]', got {row!r}")
            try:
                user = int(row[0])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad user id {row[0]!r}") from None
            split[user] = row[1]
            if len(row) == 3 and row[2]:
                env[user] = row[2]
    return split, env


def write_truth(cfg: SyntheticConfig, ds: Dataset, truth: SyntheticTruth, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "stable_topic", "noisy_topic", "env"])
        for u in ds.users:
            w.writerow([u, truth.stable[u], truth.noisy[u], ds.env[u]])


# ---------------------------------------------------------------------------
# splitting


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def _split_sizes(n: int) -> tuple[int, int]:
    n_hold = int(round(0.1 * n))
    return n_hold, n_hold


def greedy_jaccard_selection(ds: Dataset, seed_user: int, fraction: float = 0.5) -> list[int]:
    """Grow a user group from ``seed_user`` by repeatedly adding the user whose item set is
    most Jaccard-similar to the union of the group's item sets (ties to the lowest id)."""
    users = ds.users
    pos = {u: k for k, u in enumerate(users)}
    indptr = [0]
    indices: list[int] = []
    for u in users:
        items = np.unique(ds.sequences[u])
        indices.extend(items.tolist())
        indptr.append(len(indices))
    X = sparse.csr_matrix(
        (np.ones(len(indices)), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(users), ds.vocab),
    )
    sizes = np.diff(X.indptr).astype(np.float64)

    target = math.ceil(len(users) * fraction)
    chosen = np.zeros(len(users), dtype=bool)
    union = np.zeros(ds.vocab)
    order = []

    def take(k: int) -> None:
        chosen[k] = True
        order.append(users[k])
        union[X.indices[X.indptr[k] : X.indptr[k + 1]]] = 1.0

    take(pos[seed_user])
    while len(order) < target:
        inter = X @ union
        denom = sizes + union.sum() - inter
        sim = np.divide(inter, denom, out=np.zeros_like(inter), where=denom > 0)
        sim[chosen] = -1.0
        take(int(np.argmax(sim)))  # users are sorted, so argmax ties go to the lowest id
    return order


def ood_split(ds: Dataset, seed: int) -> Dataset:
    """User-group shift split: test from the greedily grown group, valid from the rest,
    and train from every remaining user (8:1:1 overall)."""
    users = ds.users
    if len(users) < 10:
        raise DataError(f"ood_split needs at least 10 users, got {len(users)}")
    rng = make_rng(seed, "splits")
    seed_user = users[int(rng.integers(len(users)))]
    group = sorted(greedy_jaccard_selection(ds, seed_user))
    rest = sorted(set(users) - set(group))
    n_test, n_valid = _split_sizes(len(users))
    test = set(rng.choice(group, size=n_test, replace=False).tolist())
    valid = set(rng.choice(rest, size=n_valid, replace=False).tolist())
    split = {u: "test" if u in test else "valid" if u in valid else "train" for u in users}
    env = {u: "ood" if u in set(group) else "iid" for u in users}
    return ds.with_split(split, env)


def random_split(ds: Dataset, seed: int) -> Dataset:
    users = ds.users
    if len(users) < 10:
        raise DataError(f"random_split needs at least 10 users, got {len(users)}")
    rng = make_rng(seed, "splits")
    perm = rng.permutation(users)
    n_test, n_valid = _split_sizes(len(users))
    split = {}
    for k, u in enumerate(perm.tolist()):
        split[u] = "test" if k < n_test else "valid" if k < n_test + n_valid else "train"
    return ds.with_split(split, {})


# ---------------------------------------------------------------------------
# examples


def make_training_example(user: int, items: np.ndarray, rng: np.random.Generator, T: int):
    """Random next-item example ``(context, target, (user, cut))`` from one sequence."""
    if len(items) < 2:
        raise DataError(f"user {user}: need at least 2 items for a training example")
    cut = int(rng.integers(1, len(items)))
    return items[max(0, cut - T) : cut], int(items[cut]), (int(user), cut)


def eval_examples(items: np.ndarray, T: int) -> tuple[np.ndarray, set[int]]:
    """Context is the first 80% of the sequence (last ``T`` kept); truth is the rest."""
    n_ctx = math.ceil(0.8 * len(items))
    return items[:n_ctx][-T:], {int(i) for i in items[n_ctx:]}


# ---------------------------------------------------------------------------
# synthetic


def generate_synthetic(cfg: SyntheticConfig) -> tuple[Dataset, SyntheticTruth]:
    """Users with one stable and one noisy topic; the noisy topic is coupled to the stable
    one with probability ``rho_train`` (train/valid) or ``rho_test`` (test).  The last item
    of every sequence comes from the stable pool."""
    rng = make_rng(cfg.seed, "synthetic")
    K = cfg.K_s
    vocab = 2 * K * cfg.items_per_topic
    sequences, split, env = {}, {}, {}
    stable, noisy = {}, {}
    groups = [("train", cfg.train_users, cfg.rho_train, "iid"), ("valid", cfg.valid_users, cfg.rho_train, "iid"),
              ("test", cfg.test_users, cfg.rho_test, "ood")]
    user = 0
    for split_name, count, rho, env_name in groups:
        for _ in range(count):
            s = int(rng.integers(K))
            if rng.random() < rho:
                n = s  # paired noisy topic shares the stable topic's index
            else:
                others = [k for k in range(K) if k != s]
                n = others[int(rng.integers(K - 1))]
            from_stable = rng.random(cfg.seq_len) < cfg.pi
            from_stable[-1] = True
            picks = rng.integers(cfg.items_per_topic, size=cfg.seq_len)
            seq = np.where(from_stable, s * cfg.items_per_topic, (K + n) * cfg.items_per_topic) + picks
            sequences[user] = seq.astype(np.int64)
            split[user] = split_name
            env[user] = env_name
            stable[user], noisy[user] = s, n
            user += 1
    ds = Dataset(sequences, vocab, split, env, item_ids=list(range(vocab)))
    return ds, SyntheticTruth(stable, noisy)
