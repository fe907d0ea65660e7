import struct
import zlib

import numpy as np
import pytest

from conftest import tiny_config
from fmla.checkpoint import (
    MAGIC,
    decode,
    encode,
    load_checkpoint,
    load_model,
    model_state,
    save_checkpoint,
    save_model,
)
from fmla.errors import (
    BadMagicError,
    CheckpointError,
    ChecksumError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from fmla.model import FMLAModel
from fmla.train import TrainConfig, train_epochs
from fmla.data import make_two_sine


@pytest.fixture(scope="module")
def trained():
    train, _ = make_two_sine(n_train=8, n_test=4, length=32, seed=1)
    model = FMLAModel(tiny_config(mask_placement="block", mask_ratio=0.25))
    train_epochs(model, train, TrainConfig(epochs=2, batch_size=4))
    return model


def test_layout_is_bit_exact():
    blob = encode({"ab": np.array([[1.0, 2.0]])})
    expected = bytearray(b"FMLA\x01") + struct.pack("<I", 1)
    expected += struct.pack("<H", 2) + b"ab" + struct.pack("<B", 2) + struct.pack("<2I", 1, 2)
    expected += struct.pack("<2f", 1.0, 2.0)
    expected += struct.pack("<I", zlib.crc32(bytes(expected)))
    assert blob == bytes(expected)


class TestRoundTrip:
    def test_save_load_save_identical(self, trained, tmp_path):
        a, b = tmp_path / "a.fmla", tmp_path / "b.fmla"
        save_model(trained, a)
        save_model(load_model(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_config_restored(self, trained, tmp_path):
        save_model(trained, tmp_path / "m.fmla")
        assert load_model(tmp_path / "m.fmla").config == trained.config

    def test_logits_preserved(self, trained, tmp_path):
        x = np.random.default_rng(0).normal(size=(6, 32))
        save_model(trained, tmp_path / "m.fmla")
        before = trained.forward_eval(x).u_sum.data
        after = load_model(tmp_path / "m.fmla").forward_eval(x).u_sum.data
        assert np.max(np.abs(before - after)) <= 1e-6

    def test_params_and_buffers_stored(self, trained, tmp_path):
        save_checkpoint(model_state(trained), trained.config, tmp_path / "m.fmla")
        params, cfg = load_checkpoint(tmp_path / "m.fmla")
        assert "dcn.0.running_var" in params and "cla.1.mix" in params and cfg == trained.config


class TestCorruption:
    @pytest.fixture
    def blob(self, trained, tmp_path):
        save_model(trained, tmp_path / "m.fmla")
        return (tmp_path / "m.fmla").read_bytes()

    @pytest.mark.parametrize("cut", [0, 3, 9, 200, -1])
    def test_truncated(self, blob, cut):
        with pytest.raises(TruncatedCheckpointError):
            decode(blob[:cut])

    def test_bad_magic(self, blob):
        with pytest.raises(BadMagicError):
            decode(b"XMLA" + blob[4:])

    def test_version(self, blob):
        with pytest.raises(VersionMismatchError):
            decode(MAGIC + b"\x02" + blob[5:])

    def test_flipped_payload_byte(self, blob):
        bad = bytearray(blob)
        bad[len(bad) // 2] ^= 0x40
        with pytest.raises(CheckpointError):
            decode(bytes(bad))

    def test_flipped_crc(self, blob):
        bad = bytearray(blob)
        bad[-1] ^= 0x01
        with pytest.raises(ChecksumError):
            decode(bytes(bad))

    def test_trailing_garbage(self, blob):
        with pytest.raises(CheckpointError):
            decode(blob + b"\x00")

    def test_no_partial_model(self, tmp_path):
        model = FMLAModel(tiny_config())
        state = model_state(model)
        state.pop("head_cla.bias")
        save_checkpoint(state, model.config, tmp_path / "m.fmla")
        with pytest.raises(CheckpointError, match="head_cla.bias"):
            load_model(tmp_path / "m.fmla")
