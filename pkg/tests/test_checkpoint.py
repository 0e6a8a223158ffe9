import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lmulm.checkpoint import decode_json, encode_json, load_checkpoint, save_checkpoint
from lmulm.errors import CheckpointCorruptError, CheckpointFormatError, CheckpointVersionError
from lmulm.numerics.tensor import Tensor


@pytest.fixture
def saved(tmp_path, rng):
    arrays = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=4).astype(np.float32),
              "scalar": np.array(2.5), "steps": np.arange(5), "meta": encode_json({"k": [1, 2]})}
    path = tmp_path / "ck.lmuc"
    save_checkpoint(arrays, str(path), precision="f64")
    return arrays, path


def test_round_trip_bitwise(saved):
    arrays, path = saved
    back, prec = load_checkpoint(str(path))
    assert prec == "f64" and list(back) == list(arrays)
    for k, a in arrays.items():
        assert back[k].dtype == a.dtype and back[k].shape == a.shape
        assert back[k].tobytes() == a.tobytes()
    assert decode_json(back["meta"]) == {"k": [1, 2]}


@given(hnp.arrays(st.sampled_from([np.float32, np.float64]), hnp.array_shapes(min_dims=0, max_dims=3, max_side=4),
                  elements=st.floats(allow_nan=False, width=32)))
def test_round_trip_property(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("ck") / "x.lmuc"
    save_checkpoint({"a": Tensor(a) if a.dtype == np.float64 else a}, str(path))
    back, _ = load_checkpoint(str(path))
    assert back["a"].tobytes() == a.tobytes() and back["a"].shape == a.shape


def test_header_layout(saved):
    _, path = saved
    raw = path.read_bytes()
    magic, version, prec, count = struct.unpack_from("<4sIBI", raw)
    assert (magic, version, prec, count) == (b"LMUC", 1, 1, 5)


def test_bad_magic_is_named(saved):
    _, path = saved
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError, match="NOPE"):
        load_checkpoint(str(path))


@pytest.mark.parametrize("keep", [0, 3, 10, 40, -1])
def test_truncation_is_an_error(saved, keep):
    _, path = saved
    raw = path.read_bytes()
    path.write_bytes(raw[:keep] if keep >= 0 else raw[:-1])
    with pytest.raises((CheckpointCorruptError, CheckpointFormatError)):
        load_checkpoint(str(path))


def test_bit_flip_fails_crc(saved):
    _, path = saved
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x10
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(str(path))


def test_version_mismatch(saved):
    _, path = saved
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 4, 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(str(path))


def test_errors_are_distinct():
    kinds = (CheckpointFormatError, CheckpointVersionError, CheckpointCorruptError)
    for a in kinds:
        for b in kinds:
            assert issubclass(a, b) == (a is b)
