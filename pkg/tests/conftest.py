import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from desmil.data import Dataset  # noqa: E402


def two_cluster_dataset(per_cluster: int = 20, pool: int = 20, length: int = 8, seed: int = 0) -> Dataset:
    """Users 0..n-1 draw items from pool A, users n..2n-1 from a disjoint pool B."""
    rng = np.random.default_rng(seed)
    seqs = {}
    for u in range(2 * per_cluster):
        base = 0 if u < per_cluster else pool
        seqs[u] = (base + rng.integers(0, pool, size=length)).astype(np.int64)
    return Dataset(seqs, 2 * pool)


@pytest.fixture
def clusters() -> Dataset:
    return two_cluster_dataset()


def small_synthetic(seed: int = 0, train: int = 120, valid: int = 30, test: int = 30):
    from desmil.data import SyntheticConfig, generate_synthetic

    cfg = SyntheticConfig(K_s=2, K_n=2, items_per_topic=15, train_users=train, valid_users=valid,
                          test_users=test, seq_len=10, seed=seed)
    return generate_synthetic(cfg)[0]


def small_hp(vocab: int, **kw):
    from desmil.model import Hyperparams

    base = dict(vocab=vocab, d=8, d_hat=8, c=2, T=8, negatives=5, lr=0.01, lr_w=50.0, batch=32)
    base.update(kw)
    return Hyperparams(**base)


def assert_states_equal(a, b):
    for k, v in a.params.as_dict().items():
        np.testing.assert_array_equal(v, getattr(b.params, k))
    for k in a.adam:
        np.testing.assert_array_equal(a.adam[k].m, b.adam[k].m)
        np.testing.assert_array_equal(a.adam[k].v, b.adam[k].v)
        assert a.adam[k].step == b.adam[k].step
    assert a.weights.as_dict() == b.weights.as_dict()
    assert a.q == b.q and a.epoch == b.epoch
    assert a.curve == b.curve and a.history == b.history


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
