"""Pure-NumPy kernels, used when the compiled extension is unavailable.

Every routine here mirrors ``_ckernels.pyx`` operation for operation.
Reductions whose result must not depend on array length (attention sums)
go through ``np.cumsum``, which accumulates strictly left to right.
Inputs are assumed validated and C-contiguous; callers in the public
modules take care of that.
"""

import math

import numpy as np


def _quantize_blocks(blk, codepoints, zero_index):
    # one block per row of ``blk``
    last = len(codepoints) - 1
    s32 = np.abs(blk).max(axis=1).astype(np.float32)
    s = s32.astype(np.float64)
    live = s > 0.0
    v = np.divide(blk, s[:, None], out=np.zeros_like(blk), where=live[:, None])
    pos = np.searchsorted(codepoints, v, side="left")
    upper = np.minimum(pos, last)
    lower = np.maximum(pos - 1, 0)
    take_upper = np.abs(v - codepoints[upper]) < np.abs(v - codepoints[lower])
    idx = np.where(take_upper, upper, lower).astype(np.uint8)
    idx[~live] = zero_index
    return s32, idx


def quantize_rows(x, block_size, codepoints, zero_index):
    rows, cols = x.shape
    nblocks = -(-cols // block_size)
    full = cols // block_size
    scales = np.empty((rows, nblocks), dtype=np.float32)
    indices = np.empty((rows, cols), dtype=np.uint8)
    if full:
        split = full * block_size
        s32, idx = _quantize_blocks(x[:, :split].reshape(rows * full, block_size), codepoints, zero_index)
        scales[:, :full] = s32.reshape(rows, full)
        indices[:, :split] = idx.reshape(rows, split)
    if full < nblocks:
        s32, idx = _quantize_blocks(x[:, full * block_size :], codepoints, zero_index)
        scales[:, full] = s32
        indices[:, full * block_size :] = idx
    return scales, indices


def pack_nibbles(indices, pad_index):
    rows, cols = indices.shape
    if cols % 2:
        pad = np.full((rows, 1), pad_index, dtype=np.uint8)
        indices = np.concatenate([indices, pad], axis=1)
    return (indices[:, 0::2] | (indices[:, 1::2] << 4)).astype(np.uint8)


def unpack_nibbles(packed, cols):
    rows, width = packed.shape
    out = np.empty((rows, 2 * width), dtype=np.uint8)
    out[:, 0::2] = packed & 0x0F
    out[:, 1::2] = packed >> 4
    return np.ascontiguousarray(out[:, :cols])


def dequantize_rows(packed, scales, cols, block_size, codepoints):
    idx = unpack_nibbles(packed, cols)
    s = np.repeat(scales.astype(np.float64), block_size, axis=1)[:, :cols]
    return s * codepoints[idx]


def attend(query, keys, values, valid_len, num_heads):
    length, width = keys.shape
    head_dim = width // num_heads
    q = query.reshape(num_heads, head_dim)
    k = keys.reshape(length, num_heads, head_dim)
    v = values.reshape(length, num_heads, head_dim)

    logits = np.cumsum(k * q, axis=2)[:, :, -1] / math.sqrt(head_dim)
    logits[valid_len:] = -np.inf
    peak = logits[:valid_len].max(axis=0)
    e = np.exp(logits - peak)
    weights = e / np.cumsum(e, axis=0)[-1]
    out = np.cumsum(weights[:, :, None] * v, axis=0)[-1]
    return out.reshape(width), np.ascontiguousarray(weights.T)
