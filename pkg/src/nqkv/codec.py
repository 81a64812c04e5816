"""NormalFloat codebooks and block-wise absmax quantization.

A codebook is a sorted table of ``2**bits`` values in ``[-1, 1]``. Each
block of a token row is divided by its absolute maximum, every element is
mapped to the index of its nearest codepoint, and the indices are packed
two per byte (element ``2i`` in the low nibble, ``2i + 1`` in the high one).
Scales are stored as float32.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from nqkv._backend import kernels
from nqkv.errors import ConfigurationError, CorruptionError, DataError, DomainError, ShapeError

#: Largest index width that fits the nibble layout.
MAX_PACKED_BITS = 4
SCALE_BYTES = 4
_FLOAT32_MAX = float(np.finfo(np.float32).max)


def normal_quantile(p):
    """Inverse of the standard normal CDF.

    Accepts a scalar or an array; raises :class:`DomainError` unless every
    probability lies strictly inside ``(0, 1)``.
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")
    z = ndtri(arr)
    return float(z) if arr.ndim == 0 else z


@dataclass(frozen=True)
class Codebook:
    """Sorted quantization levels in ``[-1, 1]``.

    ``zero_index`` addresses the codepoint of smallest magnitude (the exact
    zero for NormalFloat tables); all-zero blocks and odd-width row padding
    use it.
    """

    bits: int
    codepoints: tuple[float, ...]
    name: str
    zero_index: int = field(init=False)

    def __post_init__(self):
        cps = self.codepoints
        if len(cps) != 2**self.bits:
            raise ConfigurationError(f"{self.name}: expected {2**self.bits} codepoints, got {len(cps)}")
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ConfigurationError(f"{self.name}: codepoints must be strictly increasing")
        if cps[0] != -1.0 or cps[-1] != 1.0:
            raise ConfigurationError(f"{self.name}: codepoints must span exactly [-1, 1]")
        mags = [abs(c) for c in cps]
        object.__setattr__(self, "zero_index", mags.index(min(mags)))

    @property
    def size(self) -> int:
        return len(self.codepoints)

    @functools.cached_property
    def table(self) -> np.ndarray:
        t = np.array(self.codepoints, dtype=np.float64)
        t.flags.writeable = False
        return t

    @property
    def max_gap(self) -> float:
        return float(np.max(np.diff(self.table)))


def nf_offset(bits: int) -> float:
    """Outermost probability used by the NormalFloat construction."""
    n = 2**bits
    return 1.0 - 0.5 * (1.0 / (2 * n) + 1.0 / (2 * (n - 1)))


def build_nf_codebook(bits: int) -> Codebook:
    """Asymmetric NormalFloat table with an exact zero.

    The negative side takes ``2**(bits-1) - 1`` quantiles and the positive
    side ``2**(bits-1)``, both spaced evenly in probability between 0.5 and
    the offset; the union is normalized by its largest magnitude.
    """
    if not isinstance(bits, (int, np.integer)) or not 2 <= bits <= 8:
        raise DomainError(f"bits must be an integer in [2, 8], got {bits!r}")
    half = 2 ** (bits - 1)
    offset = nf_offset(bits)
    # linspace lands on exactly 0.5 at its end, which never reaches ndtri
    neg = -normal_quantile(np.linspace(offset, 0.5, half)[:-1])
    pos = normal_quantile(np.linspace(0.5, offset, half + 1)[1:])
    values = np.concatenate([neg, [0.0], pos])
    values = np.sort(values) / np.max(np.abs(values))
    return Codebook(int(bits), tuple(float(v) for v in values), f"nf{bits}")


def build_uniform_codebook(bits: int) -> Codebook:
    """Evenly spaced symmetric absmax levels, the integer-grid baseline."""
    if not isinstance(bits, (int, np.integer)) or not 2 <= bits <= 8:
        raise DomainError(f"bits must be an integer in [2, 8], got {bits!r}")
    values = np.linspace(-1.0, 1.0, 2**bits)
    return Codebook(int(bits), tuple(float(v) for v in values), f"uniform{bits}")


_CODEBOOK_ID = re.compile(r"^(nf|uniform)(\d)$")


@functools.lru_cache(maxsize=None)
def get_codebook(codebook_id: str) -> Codebook:
    """Resolve an identifier such as ``"nf4"`` or ``"uniform4"``."""
    m = _CODEBOOK_ID.match(codebook_id)
    if not m:
        raise ConfigurationError(f"unknown codebook id {codebook_id!r}")
    family, bits = m.group(1), int(m.group(2))
    build = build_nf_codebook if family == "nf" else build_uniform_codebook
    return build(bits)


@dataclass(frozen=True)
class QuantizedBlock:
    scale: float
    indices: tuple[int, ...]


def _check_finite(values: np.ndarray) -> None:
    if not values.size:
        return
    # one reduction: NaN propagates through max and fails the comparison
    top = np.max(np.abs(values))
    if not top <= _FLOAT32_MAX:
        if not np.all(np.isfinite(values)):
            raise DataError("input contains NaN or infinite values")
        raise DataError("block absmax exceeds the float32 scale range")


def quantize_block(values, cb: Codebook) -> QuantizedBlock:
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise DomainError("cannot quantize an empty block")
    _check_finite(x)
    scales, idx = kernels.quantize_rows(x[None, :].copy(), x.size, cb.table, cb.zero_index)
    return QuantizedBlock(float(scales[0, 0]), tuple(int(i) for i in idx[0]))


def dequantize_block(qb: QuantizedBlock, cb: Codebook) -> np.ndarray:
    idx = np.asarray(qb.indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= cb.size):
        raise CorruptionError(f"index out of range for a {cb.size}-entry codebook")
    return np.float64(np.float32(qb.scale)) * cb.table[idx]


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Per-token, per-block scales plus nibble-packed indices for an l x d matrix."""

    rows: int
    cols: int
    block_size: int
    bits: int
    codebook_id: str
    scales: np.ndarray
    packed: np.ndarray

    def __post_init__(self):
        if self.cols < 1 or self.block_size < 1 or self.rows < 0:
            raise ConfigurationError("invalid tensor geometry")
        if not 1 <= self.bits <= MAX_PACKED_BITS:
            raise ConfigurationError(f"nibble packing needs bits <= {MAX_PACKED_BITS}, got {self.bits}")
        scales = np.ascontiguousarray(self.scales, dtype=np.float32)
        packed = np.ascontiguousarray(self.packed, dtype=np.uint8)
        if scales.shape != (self.rows, self.blocks_per_row):
            raise CorruptionError(f"scales shape {scales.shape} != {(self.rows, self.blocks_per_row)}")
        if packed.shape != (self.rows, self.packed_width):
            raise CorruptionError(f"packed shape {packed.shape} != {(self.rows, self.packed_width)}")
        scales.flags.writeable = False
        packed.flags.writeable = False
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "packed", packed)

    @property
    def blocks_per_row(self) -> int:
        return -(-self.cols // self.block_size)

    @property
    def packed_width(self) -> int:
        return -(-self.cols // 2)

    @property
    def nbytes(self) -> int:
        """Stored bytes: packed indices plus float32 scales."""
        return self.packed.nbytes + self.scales.nbytes

    def indices(self) -> np.ndarray:
        return kernels.unpack_nibbles(self.packed, self.cols)

    def __eq__(self, other):
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return (
            (self.rows, self.cols, self.block_size, self.bits, self.codebook_id)
            == (other.rows, other.cols, other.block_size, other.bits, other.codebook_id)
            and self.scales.tobytes() == other.scales.tobytes()
            and self.packed.tobytes() == other.packed.tobytes()
        )


def pack_indices(indices, pad_index: int = 0) -> np.ndarray:
    """Pack a 2-D array of 4-bit indices into bytes, low nibble first."""
    idx = np.ascontiguousarray(indices, dtype=np.uint8)
    if idx.ndim != 2:
        raise ShapeError("indices must be 2-D")
    if idx.size and idx.max() > 0x0F:
        raise DomainError("indices must fit in 4 bits")
    return kernels.pack_nibbles(idx, pad_index)


def unpack_indices(packed, cols: int) -> np.ndarray:
    return kernels.unpack_nibbles(np.ascontiguousarray(packed, dtype=np.uint8), cols)


def _as_matrix(matrix) -> np.ndarray:
    m = np.ascontiguousarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def encode_tensor(matrix, block_size: int, cb: Codebook) -> QuantizedTensor:
    """Quantize every row of ``matrix`` in blocks of ``block_size`` columns.

    The last block of a row may be shorter when ``block_size`` does not
    divide the width; it is scaled over its own elements.
    """
    m = _as_matrix(matrix)
    rows, cols = m.shape
    if rows < 1 or cols < 1:
        raise ShapeError(f"matrix must be at least 1x1, got {m.shape}")
    if block_size < 1:
        raise ConfigurationError(f"block_size must be positive, got {block_size}")
    if cb.bits > MAX_PACKED_BITS:
        raise ConfigurationError(f"{cb.name} does not fit the 4-bit packed layout")
    scales, packed = encode_rows(m, int(block_size), cb)
    return QuantizedTensor(rows, cols, int(block_size), cb.bits, cb.name, scales, packed)


def encode_rows(m: np.ndarray, block_size: int, cb: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Scales and packed nibbles for a C-contiguous float64 matrix, skipping shape checks."""
    _check_finite(m)
    scales, idx = kernels.quantize_rows(m, block_size, cb.table, cb.zero_index)
    return scales, kernels.pack_nibbles(idx, cb.zero_index)


def decode_tensor(qt: QuantizedTensor, cb: Codebook) -> np.ndarray:
    if qt.codebook_id != cb.name or qt.bits != cb.bits:
        raise ConfigurationError(f"tensor was encoded with {qt.codebook_id!r}, not {cb.name!r}")
    if qt.rows == 0:
        return np.zeros((0, qt.cols))
    if cb.size < 16:
        top = int(qt.indices().max())
        if top >= cb.size:
            raise CorruptionError(f"index {top} out of range for {cb.name}")
    return kernels.dequantize_rows(qt.packed, qt.scales, qt.cols, qt.block_size, cb.table)


def effective_bits(bits: int, block_size: int, scale_bits: int = 8 * SCALE_BYTES) -> float:
    """Index bits plus amortized scale bits per stored element."""
    return bits + scale_bits / block_size


def round_trip_bound(scale: float, cb: Codebook) -> float:
    """Largest possible |x - dequant(quant(x))| for a block with this scale."""
    return scale * cb.max_gap / 2
