"""Append-only quantized key/value store.

Each decoder layer keeps its keys and values as packed NormalFloat rows,
one row per token, quantized over the full hidden width before any head
split. Rows are only ever appended. :meth:`KvCache.materialize` dequantizes
a layer into a fresh working copy whose token axis is zero-padded to a
multiple of ``pad_multiple``; the store itself is never padded.

One cache serves one sequence and has a single writer.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from nqkv._backend import kernels
from nqkv.codec import MAX_PACKED_BITS, SCALE_BYTES, Codebook, QuantizedTensor, encode_rows, get_codebook
from nqkv.errors import ConfigurationError, FormatError, ShapeError, StateError
from nqkv.formats import nqt_from_bytes, nqt_to_bytes

CACHE_MAGIC = b"NQKC"
CACHE_VERSION = 1
_CACHE_PREFIX = struct.Struct("<4sBI")
_PAYLOAD_LEN = struct.Struct("<Q")


@dataclass(frozen=True)
class KvCacheConfig:
    num_layers: int
    hidden_size: int
    num_heads: int
    block_size: int = 256
    bits: int = 4
    pad_multiple: int = 16
    codec: str = "nf"

    def __post_init__(self):
        for name in ("num_layers", "hidden_size", "num_heads", "block_size", "bits", "pad_multiple"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.hidden_size % self.num_heads:
            raise ConfigurationError(
                f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}"
            )
        if self.bits > MAX_PACKED_BITS:
            raise ConfigurationError(f"bits must be <= {MAX_PACKED_BITS} for nibble storage, got {self.bits}")
        # resolves and validates codec/bits together
        self.codebook

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    @property
    def codebook(self) -> Codebook:
        return get_codebook(f"{self.codec}{self.bits}")

    @property
    def bytes_per_row(self) -> int:
        d = self.hidden_size
        return -(-d // 2) + -(-d // self.block_size) * SCALE_BYTES


def padded_length(n: int, multiple: int) -> int:
    return -(-n // multiple) * multiple


def _pad_rows(rows: np.ndarray, multiple: int) -> np.ndarray:
    n, d = rows.shape
    out = np.zeros((padded_length(n, multiple), d), dtype=np.float64)
    out[:n] = rows
    return out


class _RowBuffer:
    """Growable row-major storage for one quantized matrix."""

    def __init__(self, cols: int, block_size: int, bits: int, codebook_id: str):
        self.cols = cols
        self.block_size = block_size
        self.bits = bits
        self.codebook_id = codebook_id
        self.rows = 0
        self._packed = np.zeros((16, -(-cols // 2)), dtype=np.uint8)
        self._scales = np.zeros((16, -(-cols // block_size)), dtype=np.float32)

    def append(self, packed: np.ndarray, scales: np.ndarray) -> None:
        need = self.rows + len(packed)
        if need > len(self._packed):
            cap = max(need, 2 * len(self._packed))
            grown_p = np.zeros((cap, self._packed.shape[1]), dtype=np.uint8)
            grown_s = np.zeros((cap, self._scales.shape[1]), dtype=np.float32)
            grown_p[: self.rows] = self.packed
            grown_s[: self.rows] = self.scales
            self._packed, self._scales = grown_p, grown_s
        self._packed[self.rows : need] = packed
        self._scales[self.rows : need] = scales
        self.rows = need

    @property
    def packed(self) -> np.ndarray:
        return self._packed[: self.rows]

    @property
    def scales(self) -> np.ndarray:
        return self._scales[: self.rows]

    def snapshot(self) -> QuantizedTensor:
        return QuantizedTensor(
            self.rows, self.cols, self.block_size, self.bits, self.codebook_id,
            self.scales.copy(), self.packed.copy(),
        )

    def dequantize(self, cb: Codebook) -> np.ndarray:
        return kernels.dequantize_rows(self.packed, self.scales, self.cols, self.block_size, cb.table)

    @property
    def nbytes(self) -> int:
        return self.packed.nbytes + self.scales.nbytes


class LayerCache:
    def __init__(self, config: KvCacheConfig):
        cb = config.codebook
        self._keys = _RowBuffer(config.hidden_size, config.block_size, cb.bits, cb.name)
        self._values = _RowBuffer(config.hidden_size, config.block_size, cb.bits, cb.name)

    @property
    def token_count(self) -> int:
        return self._keys.rows

    @property
    def keys(self) -> QuantizedTensor:
        return self._keys.snapshot()

    @property
    def values(self) -> QuantizedTensor:
        return self._values.snapshot()

    def append_rows(self, k_packed, k_scales, v_packed, v_scales) -> None:
        self._keys.append(k_packed, k_scales)
        self._values.append(v_packed, v_scales)

    @property
    def nbytes(self) -> int:
        return self._keys.nbytes + self._values.nbytes


class KvCache:
    """Per-layer quantized keys and values for one sequence."""

    def __init__(self, config: KvCacheConfig):
        self.config = config
        self.codebook = config.codebook
        self.layers = [LayerCache(config) for _ in range(config.num_layers)]

    @classmethod
    def create(cls, config: KvCacheConfig) -> KvCache:
        return cls(config)

    def token_count(self, layer: int) -> int:
        return self._layer(layer).token_count

    def _layer(self, layer: int) -> LayerCache:
        if not 0 <= layer < self.config.num_layers:
            raise ConfigurationError(f"layer {layer} out of range [0, {self.config.num_layers})")
        return self.layers[layer]

    def _check_pair(self, k, v) -> tuple[np.ndarray, np.ndarray]:
        k = np.ascontiguousarray(k, dtype=np.float64)
        v = np.ascontiguousarray(v, dtype=np.float64)
        if k.ndim == 1:
            k = k[None, :]
        if v.ndim == 1:
            v = v[None, :]
        if k.shape != v.shape:
            raise ShapeError(f"keys {k.shape} and values {v.shape} differ in shape")
        if k.ndim != 2 or k.shape[1] != self.config.hidden_size or k.shape[0] < 1:
            raise ShapeError(f"expected (l, {self.config.hidden_size}) rows, got {k.shape}")
        return k, v

    def append_prefill(self, layer: int, keys, values) -> None:
        """Quantize an l x d block of keys and values and append it."""
        lc = self._layer(layer)
        k, v = self._check_pair(keys, values)
        self._append(lc, k, v)

    def append_token(self, layer: int, key, value) -> None:
        lc = self._layer(layer)
        k, v = self._check_pair(key, value)
        if k.shape[0] != 1:
            raise ShapeError(f"append_token takes a single token, got {k.shape[0]} rows")
        self._append(lc, k, v)

    def _append(self, lc: LayerCache, k: np.ndarray, v: np.ndarray) -> None:
        # rows quantize independently, so one call covers keys and values
        n = k.shape[0]
        scales, packed = encode_rows(np.concatenate([k, v]), self.config.block_size, self.codebook)
        lc.append_rows(packed[:n], scales[:n], packed[n:], scales[n:])

    def dequantized(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        lc = self._layer(layer)
        return lc._keys.dequantize(self.codebook), lc._values.dequantize(self.codebook)

    def materialize(self, layer: int) -> tuple[np.ndarray, np.ndarray, int]:
        """Dequantized keys and values, zero-padded along the token axis."""
        lc = self._layer(layer)
        if lc.token_count == 0:
            raise StateError(f"layer {layer} holds no tokens")
        k, v = self.dequantized(layer)
        pm = self.config.pad_multiple
        return _pad_rows(k, pm), _pad_rows(v, pm), lc.token_count

    def memory_bytes(self) -> int:
        return sum(lc.nbytes for lc in self.layers)

    def to_bytes(self) -> bytes:
        """Serialize config plus every layer's keys and values as ``.nqt`` payloads."""
        cfg = json.dumps(asdict(self.config), sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [_CACHE_PREFIX.pack(CACHE_MAGIC, CACHE_VERSION, len(cfg)), cfg]
        for lc in self.layers:
            for qt in (lc.keys, lc.values):
                blob = nqt_to_bytes(qt)
                parts += [_PAYLOAD_LEN.pack(len(blob)), blob]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> KvCache:
        if len(data) < _CACHE_PREFIX.size:
            raise FormatError("too short for a cache snapshot", 0)
        magic, version, clen = _CACHE_PREFIX.unpack_from(data, 0)
        if magic != CACHE_MAGIC:
            raise FormatError(f"bad magic {magic!r}", 0)
        if version != CACHE_VERSION:
            raise FormatError(f"unsupported snapshot version {version}", 4)
        off = _CACHE_PREFIX.size
        try:
            cfg = KvCacheConfig(**json.loads(data[off : off + clen].decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
            raise FormatError(f"bad config: {exc}", off) from None
        off += clen
        cache = cls(cfg)
        for i, lc in enumerate(cache.layers):
            pair = []
            for _ in range(2):
                if off + _PAYLOAD_LEN.size > len(data):
                    raise FormatError(f"layer {i} payload missing", off)
                (n,) = _PAYLOAD_LEN.unpack_from(data, off)
                off += _PAYLOAD_LEN.size
                if off + n > len(data):
                    raise FormatError(f"layer {i} payload truncated", off)
                pair.append(nqt_from_bytes(data[off : off + n]))
                off += n
            qk, qv = pair
            if qk.rows != qv.rows or qk.cols != cfg.hidden_size or qk.codebook_id != cache.codebook.name:
                raise FormatError(f"layer {i} payload does not match the config", off)
            lc.append_rows(qk.packed, qk.scales, qv.packed, qv.scales)
        if off != len(data):
            raise FormatError(f"{len(data) - off} trailing bytes", off)
        return cache

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> KvCache:
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


class DenseKvCache(KvCache):
    """Unquantized float64 store with the same interface; the exact reference."""

    def __init__(self, config: KvCacheConfig):
        self.config = config
        self.codebook = None
        self._k: list[list[np.ndarray]] = [[] for _ in range(config.num_layers)]
        self._v: list[list[np.ndarray]] = [[] for _ in range(config.num_layers)]

    def _rows(self, layer: int) -> tuple[list, list]:
        if not 0 <= layer < self.config.num_layers:
            raise ConfigurationError(f"layer {layer} out of range [0, {self.config.num_layers})")
        return self._k[layer], self._v[layer]

    def token_count(self, layer: int) -> int:
        return sum(len(a) for a in self._rows(layer)[0])

    def append_prefill(self, layer: int, keys, values) -> None:
        ks, vs = self._rows(layer)
        k, v = self._check_pair(keys, values)
        ks.append(k.copy())
        vs.append(v.copy())

    def append_token(self, layer: int, key, value) -> None:
        k, v = self._check_pair(key, value)
        if k.shape[0] != 1:
            raise ShapeError(f"append_token takes a single token, got {k.shape[0]} rows")
        self.append_prefill(layer, k, v)

    def dequantized(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        ks, vs = self._rows(layer)
        d = self.config.hidden_size
        if not ks:
            return np.zeros((0, d)), np.zeros((0, d))
        return np.concatenate(ks), np.concatenate(vs)

    def materialize(self, layer: int) -> tuple[np.ndarray, np.ndarray, int]:
        n = self.token_count(layer)
        if n == 0:
            raise StateError(f"layer {layer} holds no tokens")
        k, v = self.dequantized(layer)
        pm = self.config.pad_multiple
        return _pad_rows(k, pm), _pad_rows(v, pm), n

    def memory_bytes(self) -> int:
        return sum(8 * 2 * self.token_count(i) * self.config.hidden_size for i in range(self.config.num_layers))

    def to_bytes(self) -> bytes:
        raise NotImplementedError("dense reference caches are not serialized")
