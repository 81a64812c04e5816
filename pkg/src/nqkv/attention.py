"""Multi-head attention prefill and decode against a quantized KV cache.

Keys and values are quantized on the full hidden width as soon as they are
projected, appended to the cache, and read back only in dequantized form,
so prefill and decode attend over the same quantized values. Decode
appends the new token before attending, which makes the first step on an
empty cache well-defined. Projection biases, the output projection and the
rest of the decoder block are deliberately absent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nqkv._backend import kernels
from nqkv.cache import KvCache
from nqkv.errors import ConfigurationError, DataError, ShapeError, StateError


@dataclass(frozen=True, eq=False)
class AttentionWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        mats = [np.ascontiguousarray(m, dtype=np.float64) for m in (self.w_q, self.w_k, self.w_v)]
        d = mats[0].shape[0] if mats[0].ndim == 2 else -1
        for name, m in zip(("w_q", "w_k", "w_v"), mats):
            if m.ndim != 2 or m.shape != (d, d):
                raise ShapeError(f"{name} must be a square {d}x{d} matrix, got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise DataError(f"{name} has non-finite entries")
            m.flags.writeable = False
        object.__setattr__(self, "w_q", mats[0])
        object.__setattr__(self, "w_k", mats[1])
        object.__setattr__(self, "w_v", mats[2])

    @property
    def hidden_size(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def gaussian(cls, d: int, rng: np.random.Generator) -> AttentionWeights:
        """Weights drawn from N(0, 1/d), keeping projections at unit scale."""
        std = 1.0 / np.sqrt(d)
        return cls(*(rng.normal(0.0, std, size=(d, d)) for _ in range(3)))


@dataclass(frozen=True, eq=False)
class DecodeOutput:
    output: np.ndarray
    # (num_heads, valid_len): softmax weights over the cached tokens
    attn_weights: np.ndarray


def project_qkv(x, w: AttentionWeights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != w.hidden_size:
        raise ShapeError(f"input must be (l, {w.hidden_size}), got {x.shape}")
    return x @ w.w_q, x @ w.w_k, x @ w.w_v


def attend(query, keys, values, valid_len: int, num_heads: int) -> tuple[np.ndarray, np.ndarray]:
    """One query row against padded keys/values; rows past ``valid_len`` are masked.

    Sums run in a fixed order over the full padded length, so padding with
    zero rows leaves the result bit-for-bit unchanged.
    """
    q = np.ascontiguousarray(query, dtype=np.float64)
    k = np.ascontiguousarray(keys, dtype=np.float64)
    v = np.ascontiguousarray(values, dtype=np.float64)
    if k.shape != v.shape or k.ndim != 2 or q.shape != (k.shape[1],):
        raise ShapeError(f"query {q.shape}, keys {k.shape}, values {v.shape} do not conform")
    if k.shape[1] % num_heads:
        raise ConfigurationError(f"width {k.shape[1]} is not divisible by {num_heads} heads")
    if not 1 <= valid_len <= k.shape[0]:
        raise ShapeError(f"valid_len {valid_len} outside [1, {k.shape[0]}]")
    return kernels.attend(q, k, v, int(valid_len), int(num_heads))


def _check_width(cache: KvCache, w: AttentionWeights) -> None:
    if cache.config.hidden_size != w.hidden_size:
        raise ShapeError(f"weights are {w.hidden_size}-wide, cache is {cache.config.hidden_size}-wide")


def prefill(x, w: AttentionWeights, cache: KvCache, layer: int) -> np.ndarray:
    """Store the prompt's keys/values and return causal attention outputs (l x d)."""
    _check_width(cache, w)
    if cache.token_count(layer) != 0:
        raise StateError(f"prefill needs an empty layer; layer {layer} holds {cache.token_count(layer)} tokens")
    q, k, v = project_qkv(x, w)
    cache.append_prefill(layer, k, v)
    kp, vp, n = cache.materialize(layer)
    heads = cache.config.num_heads
    out = np.empty_like(q)
    for i in range(n):
        out[i], _ = attend(q[i], kp, vp, i + 1, heads)
    return out


def decode_step(t, w: AttentionWeights, cache: KvCache, layer: int) -> DecodeOutput:
    """Append one token's key/value, then attend over the whole cache."""
    _check_width(cache, w)
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1:
        t = t[None, :]
    if t.shape != (1, w.hidden_size):
        raise ShapeError(f"decode input must be (1, {w.hidden_size}), got {t.shape}")
    tq, tk, tv = project_qkv(t, w)
    cache.append_token(layer, tk, tv)
    kp, vp, n = cache.materialize(layer)
    out, weights = attend(tq[0], kp, vp, n, cache.config.num_heads)
    return DecodeOutput(out, weights[:, :n])
