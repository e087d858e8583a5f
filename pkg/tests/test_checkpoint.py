import hashlib
import struct

import numpy as np
import pytest

from desmil.checkpoint import (
    Checkpoint,
    CheckpointChecksumError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    from_bytes,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)


def sample_checkpoint() -> Checkpoint:
    rng = np.random.default_rng(0)
    return Checkpoint(
        hyperparams={"vocab": 10, "d": 4, "sigma": None},
        tensors={"params.V": rng.normal(size=(10, 4)), "scalar": np.array(3.5), "empty": np.zeros((0, 3))},
        tables={"weights": {(1, 2): 0.25, (7, 3): 1.0}, "none": {}},
        rng_states={"negatives": rng.bit_generator.state},
        q=17,
        meta={"kind": "state", "curve": [[1, 0.5, None]]},
    )


def reseal(data: bytes) -> bytes:
    body = data[:-32]
    return body + hashlib.sha256(body).digest()


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        ck = sample_checkpoint()
        save_checkpoint(ck, tmp_path / "a.ckpt")
        back = load_checkpoint(tmp_path / "a.ckpt")
        assert back.hyperparams == ck.hyperparams and back.q == 17 and back.meta == ck.meta
        assert back.tables == ck.tables and back.rng_states == ck.rng_states
        for k, v in ck.tensors.items():
            assert back.tensors[k].shape == v.shape
            assert back.tensors[k].tobytes() == v.tobytes()
        assert to_bytes(back) == to_bytes(ck)

    def test_special_floats(self):
        ck = Checkpoint({}, {"x": np.array([np.inf, -0.0, 5e-324])})
        back = from_bytes(to_bytes(ck))
        assert back.tensors["x"].tobytes() == ck.tensors["x"].tobytes()

    def test_no_stray_tmp(self, tmp_path):
        save_checkpoint(sample_checkpoint(), tmp_path / "a.ckpt")
        assert [p.name for p in tmp_path.iterdir()] == ["a.ckpt"]


class TestCorruption:
    def test_flipped_byte(self):
        data = bytearray(to_bytes(sample_checkpoint()))
        data[len(data) // 2] ^= 0x01
        with pytest.raises(CheckpointChecksumError):
            from_bytes(bytes(data))

    def test_bad_magic(self):
        data = b"NOTACKPT" + to_bytes(sample_checkpoint())[8:]
        with pytest.raises(CheckpointVersionError):
            from_bytes(data)

    def test_future_version(self):
        data = bytearray(to_bytes(sample_checkpoint()))
        data[8:12] = struct.pack("<I", 99)
        with pytest.raises(CheckpointVersionError):
            from_bytes(reseal(bytes(data)))

    @pytest.mark.parametrize("keep", [0, 10, 25, 100])
    def test_truncated(self, keep):
        with pytest.raises(CheckpointTruncatedError):
            from_bytes(to_bytes(sample_checkpoint())[:keep])

    def test_missing_tail(self):
        with pytest.raises(CheckpointTruncatedError):
            from_bytes(to_bytes(sample_checkpoint())[:-1])
