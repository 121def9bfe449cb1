import struct

import numpy as np
import pytest

from umixformer.checkpoint import VERSION, decode_checkpoint, encode_checkpoint
from umixformer.config import ModelConfig, tiny_config
from umixformer.errors import CheckpointError, ConfigError
from umixformer.train import checkpoint_to_state, new_state, param_hash, state_to_checkpoint


@pytest.fixture
def blob():
    state = new_state(tiny_config(), 4, 1e-3)
    return encode_checkpoint(state_to_checkpoint(state)), state


def test_round_trip_is_bit_exact(blob):
    data, state = blob
    back = checkpoint_to_state(decode_checkpoint(data))
    assert param_hash(back.model) == param_hash(state.model)
    assert encode_checkpoint(state_to_checkpoint(back)) == data
    for (n1, a), (n2, b) in zip(state.model.named_params(), back.model.named_params()):
        assert n1 == n2 and a.tobytes() == b.tobytes()


def test_special_values_survive(blob):
    data, state = blob
    ckpt = decode_checkpoint(data)
    ckpt.tensors["x"] = np.array([np.nan, -0.0, np.inf, 5e-324])
    again = decode_checkpoint(encode_checkpoint(ckpt))
    assert again.tensors["x"].tobytes() == ckpt.tensors["x"].tobytes()


@pytest.mark.parametrize("cut", [3, 10, 50, -1])
def test_truncation_is_reported(blob, cut):
    with pytest.raises(CheckpointError, match="truncated"):
        decode_checkpoint(blob[0][:cut])


def test_bad_magic_version_and_trailing_bytes(blob):
    data = blob[0]
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(data[:4] + struct.pack("<I", VERSION + 1) + data[8:])
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(data + b"\0")


def test_config_json_round_trip(tmp_path):
    cfg = ModelConfig(plus_midpoint=True, heads=(1, 2, 2, 2))
    cfg.save(tmp_path / "c.json")
    assert ModelConfig.load(tmp_path / "c.json") == cfg
    with pytest.raises(ConfigError, match="unknown"):
        ModelConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        ModelConfig.loads("[1]")
