"""Checkpoint binary format round trips and corruption handling."""

import numpy as np
import pytest

from farnet.checkpoint import (
    CheckpointError,
    CheckpointState,
    load_checkpoint,
    save_checkpoint,
)


def _state():
    rng = np.random.default_rng(0)
    params = {
        "enc.w": rng.normal(size=(4, 6)),
        "enc.b": rng.normal(size=6),
        "head": rng.normal(size=(6, 6, 2)),
    }
    return CheckpointState(
        config_text="seed=3\nepochs=2\n",
        params=params,
        opt_step=17,
        opt_m={k: rng.normal(size=v.shape) for k, v in params.items()},
        opt_v={k: np.abs(rng.normal(size=v.shape)) for k, v in params.items()},
        epoch=2,
        rng_state=(3, 29, 12345),
    )


def test_roundtrip_preserves_everything_bitwise(tmp_path):
    path = tmp_path / "model.bin"
    state = _state()
    save_checkpoint(path, state)
    loaded = load_checkpoint(path)
    assert loaded.config_text == state.config_text
    assert list(loaded.params) == list(state.params)
    for name in state.params:
        assert np.array_equal(loaded.params[name], state.params[name])
        assert np.array_equal(loaded.opt_m[name], state.opt_m[name])
        assert np.array_equal(loaded.opt_v[name], state.opt_v[name])
    assert loaded.opt_step == 17
    assert loaded.epoch == 2
    assert loaded.rng_state == (3, 29, 12345)


def test_save_load_save_is_byte_identical(tmp_path):
    p1 = tmp_path / "a.bin"
    p2 = tmp_path / "b.bin"
    save_checkpoint(p1, _state())
    save_checkpoint(p2, load_checkpoint(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_magic_bytes_lead_the_file(tmp_path):
    path = tmp_path / "m.bin"
    save_checkpoint(path, _state())
    assert path.read_bytes()[:4] == b"FARN"


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    save_checkpoint(path, _state())
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_version_mismatch_is_hard_error(tmp_path):
    path = tmp_path / "v.bin"
    save_checkpoint(path, _state())
    blob = bytearray(path.read_bytes())
    blob[4] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(path)
    assert "format_version" in str(exc.value)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "t.bin"
    save_checkpoint(path, _state())
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.bin")
