"""On-disk layouts.

``.nqt`` quantized tensor::

    b"NQKV" | u8 version (=1) | u32 LE header length | UTF-8 JSON header
    | float32 LE scales, row-major | packed index bytes, row-major

The JSON header holds ``rows, cols, block_size, bits, codebook_id`` and is
written with sorted keys and no whitespace so equal tensors give equal bytes.

Raw tensor (``.raw``)::

    one line of JSON {"rows": l, "cols": d} terminated by b"\\n"
    | l*d float32 LE values, row-major
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from nqkv.codec import QuantizedTensor
from nqkv.errors import FormatError, ShapeError

NQT_MAGIC = b"NQKV"
NQT_VERSION = 1
_NQT_PREFIX = struct.Struct("<4sBI")
_HEADER_KEYS = ("bits", "block_size", "codebook_id", "cols", "rows")


def _dump_header(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def nqt_to_bytes(qt: QuantizedTensor) -> bytes:
    header = _dump_header(
        {
            "rows": qt.rows,
            "cols": qt.cols,
            "block_size": qt.block_size,
            "bits": qt.bits,
            "codebook_id": qt.codebook_id,
        }
    )
    return b"".join(
        [
            _NQT_PREFIX.pack(NQT_MAGIC, NQT_VERSION, len(header)),
            header,
            qt.scales.astype("<f4").tobytes(),
            qt.packed.tobytes(),
        ]
    )


def nqt_from_bytes(data: bytes) -> QuantizedTensor:
    if len(data) < _NQT_PREFIX.size:
        raise FormatError(f"file too short for the .nqt prefix: {len(data)} bytes", 0)
    magic, version, hlen = _NQT_PREFIX.unpack_from(data, 0)
    if magic != NQT_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != NQT_VERSION:
        raise FormatError(f"unsupported .nqt version {version}", 4)
    off = _NQT_PREFIX.size
    if len(data) < off + hlen:
        raise FormatError(f"header needs {hlen} bytes, only {len(data) - off} present", off)
    try:
        header = json.loads(data[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unparseable header: {exc}", off) from None
    if not isinstance(header, dict) or sorted(header) != list(_HEADER_KEYS):
        raise FormatError(f"header keys must be {list(_HEADER_KEYS)}", off)
    off += hlen

    rows, cols, block = header["rows"], header["cols"], header["block_size"]
    if not all(isinstance(v, int) and v >= 0 for v in (rows, cols, block)) or cols < 1 or block < 1:
        raise FormatError("header geometry must be non-negative integers", _NQT_PREFIX.size)
    nscale = rows * -(-cols // block)
    npacked = rows * -(-cols // 2)
    expected = off + 4 * nscale + npacked
    if len(data) != expected:
        raise FormatError(f"payload length mismatch: expected {expected} bytes total, got {len(data)}", off)
    scales = np.frombuffer(data, dtype="<f4", count=nscale, offset=off).reshape(rows, -(-cols // block))
    packed = np.frombuffer(data, dtype=np.uint8, count=npacked, offset=off + 4 * nscale).reshape(rows, -(-cols // 2))
    return QuantizedTensor(rows, cols, block, header["bits"], header["codebook_id"], scales, packed)


def write_nqt(path: str | os.PathLike, qt: QuantizedTensor) -> None:
    with open(path, "wb") as f:
        f.write(nqt_to_bytes(qt))


def read_nqt(path: str | os.PathLike) -> QuantizedTensor:
    with open(path, "rb") as f:
        return nqt_from_bytes(f.read())


def raw_to_bytes(matrix) -> bytes:
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ShapeError(f"raw tensors are 2-D, got shape {m.shape}")
    header = _dump_header({"rows": m.shape[0], "cols": m.shape[1]}) + b"\n"
    return header + np.ascontiguousarray(m, dtype="<f4").tobytes()


def raw_from_bytes(data: bytes) -> np.ndarray:
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("missing newline after JSON header", len(data))
    try:
        header = json.loads(data[:nl].decode("utf-8"))
        rows, cols = header["rows"], header["cols"]
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, KeyError) as exc:
        raise FormatError(f"malformed header: {exc!r}", 0) from None
    if not (isinstance(rows, int) and isinstance(cols, int) and rows >= 0 and cols >= 0):
        raise FormatError(f"rows/cols must be non-negative integers, got {rows!r}, {cols!r}", 0)
    start = nl + 1
    expected = rows * cols * 4
    actual = len(data) - start
    if actual != expected:
        raise FormatError(f"payload length mismatch: expected {expected} bytes, got {actual}", start)
    return np.frombuffer(data, dtype="<f4", offset=start).reshape(rows, cols).astype(np.float32)


def write_raw(path: str | os.PathLike, matrix) -> None:
    with open(path, "wb") as f:
        f.write(raw_to_bytes(matrix))


def ingest_tensor(path: str | os.PathLike) -> np.ndarray:
    """Read a raw float32 tensor file, validating the payload length."""
    with open(path, "rb") as f:
        return raw_from_bytes(f.read())
