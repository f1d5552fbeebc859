import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeformer.checkpoint import MAGIC, Checkpoint, load_checkpoint, save_checkpoint
from edgeformer.config import ModelConfig
from edgeformer.exceptions import (
    BadMagicError,
    CheckpointError,
    FormatError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from edgeformer.mae import init_mae_params

CONFIG = ModelConfig(d_model=6, n_heads=2, n_encoder_layers=1, dim_head_features=3, dim_edge_features=2,
                     dim_tail_features=3)


def _checkpoint():
    return Checkpoint("edge_mae", CONFIG.to_dict(), init_mae_params(CONFIG, 0),
                      {"mean": [[0.0] * 3, [1.0] * 2, [0.5] * 3], "scale": [[1.0] * 3, [2.0] * 2, [1.0] * 3]},
                      {"seed": 0, "epoch": 3, "loss": 0.25})


def test_save_load_save_identical(tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(_checkpoint(), a)
    save_checkpoint(load_checkpoint(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_contents_preserved(tmp_path):
    ckpt = _checkpoint()
    path = tmp_path / "c.ckpt"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    assert back.params.names() == ckpt.params.names()
    assert back.params.shapes() == ckpt.params.shapes()
    for name, value in ckpt.params.items():
        np.testing.assert_array_equal(back.params[name], value.astype(np.float32))
    assert (back.kind, back.model_config, back.standardization, back.metadata) == \
        (ckpt.kind, ckpt.model_config, ckpt.standardization, ckpt.metadata)
    assert ModelConfig.from_dict(back.model_config) == CONFIG


def test_layout_prefix():
    raw = _checkpoint().to_bytes()
    magic, version, header_len = struct.unpack_from("<4sHI", raw)
    assert (magic, version) == (MAGIC, 1)
    header = json.loads(raw[10:10 + header_len])
    assert [t["name"] for t in header["tensors"]] == _checkpoint().params.names()
    sizes = [4 * int(np.prod(t["shape"])) for t in header["tensors"]]
    assert len(raw) == 10 + header_len + sum(sizes)


def test_empty_params_round_trip():
    from edgeformer.params import ParamStore
    ckpt = Checkpoint("intimacy", {}, ParamStore(), None, {})
    assert Checkpoint.from_bytes(ckpt.to_bytes()).to_bytes() == ckpt.to_bytes()


@pytest.mark.parametrize("cut", [0, 2, 5, 9, 40, -1, -17])
def test_truncation(cut):
    raw = _checkpoint().to_bytes()
    with pytest.raises(TruncatedFileError):
        Checkpoint.from_bytes(raw[:cut])


def test_bad_magic():
    raw = _checkpoint().to_bytes()
    with pytest.raises(BadMagicError):
        Checkpoint.from_bytes(b"PK\x03\x04" + raw[4:])


def test_unknown_version():
    raw = bytearray(_checkpoint().to_bytes())
    raw[4:6] = struct.pack("<H", 2)
    with pytest.raises(UnsupportedVersionError):
        Checkpoint.from_bytes(bytes(raw))


def test_trailing_bytes():
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(_checkpoint().to_bytes() + b"\x00\x00\x00\x00")


def test_corrupt_header():
    raw = bytearray(_checkpoint().to_bytes())
    raw[10] = ord("[")
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(bytes(raw))


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_corruption_never_crashes(data):
    raw = bytearray(_checkpoint().to_bytes())
    for _ in range(data.draw(st.integers(1, 6))):
        pos = data.draw(st.integers(0, len(raw) - 1))
        raw[pos] = data.draw(st.integers(0, 255))
    try:
        Checkpoint.from_bytes(bytes(raw))
    except FormatError:
        pass
