import struct

import numpy as np
import pytest

from minidl.errors import DataError
from minidl.tensor import Tensor
from minidl.tensor_io import (
    read_tensor,
    read_tensor_header,
    tensor_file_bytes,
    write_tensor,
)

CASES = [
    np.arange(12, dtype=np.float32).reshape(3, 4),
    np.linspace(-1, 1, 30).astype(np.float64).reshape(2, 3, 5),
    np.array([[1, -2], [3, 4]], dtype=np.int32),
    np.arange(6, dtype=np.uint8).reshape(6),
    np.array(2.5, dtype=np.float32),  # rank 0
    np.zeros((2, 0, 3), dtype=np.float32),  # zero extent
]


@pytest.mark.parametrize("arr", CASES, ids=lambda a: f"{a.dtype}{list(a.shape)}")
def test_round_trip(tmp_path, arr):
    p = tmp_path / "t.fmlt"
    write_tensor(p, arr)
    back = read_tensor(p)
    assert back.shape == arr.shape
    assert back.dtype == arr.dtype
    assert np.array_equal(back, arr)


def test_header_layout():
    data = tensor_file_bytes(np.zeros((3, 4), np.float32))
    assert data[:4] == b"FMLT"
    version, code, rank = struct.unpack_from("<IBB", data, 4)
    assert (version, code, rank) == (1, 0, 2)
    assert struct.unpack_from("<2Q", data, 10) == (3, 4)
    assert len(data) == 10 + 16 + 3 * 4 * 4


def test_dtype_codes():
    for arr, code in [
        (np.zeros(1, np.float32), 0),
        (np.zeros(1, np.float64), 1),
        (np.zeros(1, np.int32), 2),
        (np.zeros(1, np.uint8), 3),
    ]:
        assert tensor_file_bytes(arr)[8] == code


def test_header_probe_without_payload(tmp_path):
    p = tmp_path / "t.fmlt"
    write_tensor(p, np.zeros((5, 2, 7), np.int32))
    shape, dtype = read_tensor_header(p)
    assert shape == (5, 2, 7)
    assert dtype == "int32"


def test_accepts_tensor_values(tmp_path):
    t = Tensor(np.arange(4, dtype=np.float32))
    p = tmp_path / "t.fmlt"
    write_tensor(p, t)
    assert np.array_equal(read_tensor(p), t.data)


def test_unsupported_dtype():
    with pytest.raises(DataError):
        tensor_file_bytes(np.zeros(2, np.int64))


@pytest.mark.parametrize(
    "mangle,why",
    [
        (lambda d: b"XMLT" + d[4:], "bad magic"),
        (lambda d: d[:4] + struct.pack("<I", 2) + d[8:], "bad version"),
        (lambda d: d[:8] + b"\x07" + d[9:], "unknown dtype code"),
        (lambda d: d[:-2], "short payload"),
        (lambda d: d + b"\x00", "trailing bytes"),
        (lambda d: d[:9], "truncated header"),
        (lambda d: d[:12], "truncated extents"),
    ],
)
def test_corrupt_files_raise(tmp_path, mangle, why):
    good = tensor_file_bytes(np.arange(6, dtype=np.float32).reshape(2, 3))
    p = tmp_path / "bad.fmlt"
    p.write_bytes(mangle(good))
    with pytest.raises(DataError):
        read_tensor(p)


def test_payload_is_little_endian():
    data = tensor_file_bytes(np.array([1.0], np.float32))
    assert data[-4:] == struct.pack("<f", 1.0)
