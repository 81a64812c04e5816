"""Memory model, codec error benchmark and synthetic decode simulation.

Random draws use NumPy's PCG64 generator seeded per run; every report
echoes its config and seed list so any run can be replayed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from nqkv.attention import AttentionWeights, decode_step, prefill
from nqkv.cache import DenseKvCache, KvCache, KvCacheConfig
from nqkv.codec import decode_tensor, encode_tensor, get_codebook
from nqkv.errors import ConfigurationError, RangeError, ShapeError

INT64_MAX = 2**63 - 1

DISTRIBUTIONS = ("normal", "uniform", "laplace", "zero")
_DIST_CODES = {name: i for i, name in enumerate(DISTRIBUTIONS)}


@dataclass(frozen=True)
class ModelSpec:
    name: str
    num_layers: int
    hidden_size: int
    num_params: int
    weight_bits: int = 16
    kv_bits: int = 16
    kv_block_size: int = 256
    # 0 means unquantized KV: no per-block scales stored
    scale_bits: int = 0

    def __post_init__(self):
        params = self.num_params
        if isinstance(params, float) and params.is_integer():
            object.__setattr__(self, "num_params", int(params))
        for name in ("num_layers", "hidden_size", "num_params", "weight_bits", "kv_bits", "kv_block_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.scale_bits, int) or self.scale_bits < 0:
            raise ConfigurationError(f"scale_bits must be a non-negative integer, got {self.scale_bits!r}")

    @property
    def kv_effective_bits(self) -> Fraction:
        return self.kv_bits + Fraction(self.scale_bits, self.kv_block_size)

    def with_kv(self, kv_bits: int, kv_block_size: int, scale_bits: int) -> ModelSpec:
        fields = asdict(self) | {"kv_bits": kv_bits, "kv_block_size": kv_block_size, "scale_bits": scale_bits}
        return ModelSpec(**fields)


# layer count and hidden size of the public OPT family
MODEL_PRESETS = {
    "opt-125m": ModelSpec("opt-125m", 12, 768, 125_000_000),
    "opt-1.3b": ModelSpec("opt-1.3b", 24, 2048, 1_300_000_000),
    "opt-6.7b": ModelSpec("opt-6.7b", 32, 4096, 6_700_000_000),
    "opt-13b": ModelSpec("opt-13b", 40, 5120, 13_000_000_000),
    "opt-30b": ModelSpec("opt-30b", 48, 7168, 30_000_000_000),
    "opt-175b": ModelSpec("opt-175b", 96, 12288, 175_000_000_000),
}


def _guard(value: int, what: str) -> int:
    if value > INT64_MAX:
        raise RangeError(f"{what} = {value} exceeds the 64-bit range")
    return value


def kv_memory_model(spec: ModelSpec, batch: int, seqlen: int) -> dict:
    """KV-cache and weight bytes for a batch of sequences.

    Runtime activations are not modelled, so ``kv_fraction`` only compares
    the cache against the weights.
    """
    for name, value in (("batch", batch), ("seqlen", seqlen)):
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
    elements = _guard(2 * spec.num_layers * batch * seqlen * spec.hidden_size, "kv elements")
    kv_bytes = _guard(math.ceil(elements * spec.kv_effective_bits / 8), "kv_bytes")
    weight_bytes = _guard(math.ceil(Fraction(spec.num_params * spec.weight_bits, 8)), "weight_bytes")
    return {
        "model": spec.name,
        "batch": batch,
        "seqlen": seqlen,
        "kv_effective_bits": float(spec.kv_effective_bits),
        "kv_bytes": kv_bytes,
        "weight_bytes": weight_bytes,
        "kv_fraction": kv_bytes / (kv_bytes + weight_bytes),
        "kv_to_weight_ratio": kv_bytes / weight_bytes,
    }


def _draw(dist: str, rng: np.random.Generator, shape) -> np.ndarray:
    if dist == "normal":
        return rng.standard_normal(shape)
    if dist == "uniform":
        return rng.uniform(-1.0, 1.0, shape)
    if dist == "laplace":
        return rng.laplace(0.0, 1.0, shape)
    if dist == "zero":
        return np.zeros(shape)
    raise ConfigurationError(f"unknown distribution {dist!r}; choose from {DISTRIBUTIONS}")


def block_errors(blocks: np.ndarray, codebook_id: str) -> tuple[np.ndarray, float]:
    """Per-block RMSE and the largest absolute error after a round trip."""
    cb = get_codebook(codebook_id)
    qt = encode_tensor(blocks, blocks.shape[1], cb)
    err = blocks - decode_tensor(qt, cb)
    return np.sqrt(np.mean(err**2, axis=1)), float(np.max(np.abs(err)))


def error_benchmark(
    block_size: int = 256,
    bits: int = 4,
    num_blocks: int = 10_000,
    seeds=(0,),
    distributions=("normal", "uniform", "laplace"),
) -> dict:
    """Round-trip error of the NormalFloat and uniform-grid codecs on synthetic blocks."""
    if num_blocks < 1:
        raise ConfigurationError(f"num_blocks must be >= 1, got {num_blocks}")
    seeds = sorted(int(s) for s in seeds)
    if not seeds:
        raise ConfigurationError("at least one seed is required")
    for dist in distributions:
        if dist not in _DIST_CODES:
            raise ConfigurationError(f"unknown distribution {dist!r}; choose from {DISTRIBUTIONS}")
    codecs = (f"nf{bits}", f"uniform{bits}")
    results = {}
    for dist in distributions:
        rmse = {c: [] for c in codecs}
        worst = {c: 0.0 for c in codecs}
        for seed in seeds:
            rng = np.random.default_rng([seed, _DIST_CODES[dist]])
            blocks = _draw(dist, rng, (num_blocks, block_size))
            for c in codecs:
                r, m = block_errors(blocks, c)
                rmse[c].append(r)
                worst[c] = max(worst[c], m)
        entry = {
            c: {"mean_rmse": float(np.mean(np.concatenate(rmse[c]))), "max_error": worst[c]}
            for c in codecs
        }
        nf, uni = entry[codecs[0]]["mean_rmse"], entry[codecs[1]]["mean_rmse"]
        entry["rmse_ratio"] = nf / uni if uni > 0 else None
        results[dist] = entry
    return {
        "kind": "error_benchmark",
        "config": {
            "block_size": block_size,
            "bits": bits,
            "num_blocks": num_blocks,
            "distributions": list(distributions),
            "codecs": list(codecs),
        },
        "seeds": seeds,
        "results": results,
    }


def _make_cache(codec: str, d: int, heads: int, block_size: int, pad_multiple: int) -> KvCache:
    if codec == "exact":
        return DenseKvCache(KvCacheConfig(1, d, heads, block_size, 4, pad_multiple))
    cb = get_codebook(codec)
    family = codec[: -len(str(cb.bits))]
    return KvCache(KvCacheConfig(1, d, heads, block_size, cb.bits, pad_multiple, family))


def run_decode(codec: str, weights: AttentionWeights, prompt: np.ndarray, steps: np.ndarray,
               heads: int, block_size: int = 64, pad_multiple: int = 16) -> tuple[np.ndarray, KvCache]:
    """Prefill ``prompt`` then decode each row of ``steps``; returns the per-step outputs."""
    d = prompt.shape[1]
    cache = _make_cache(codec, d, heads, block_size, pad_multiple)
    prefill(prompt, weights, cache, 0)
    outs = np.empty((len(steps), d))
    for i, t in enumerate(steps):
        outs[i] = decode_step(t, weights, cache, 0).output
    return outs, cache


def simulate_decode(
    d: int = 128,
    heads: int = 4,
    prompt_len: int = 32,
    gen_len: int = 32,
    seeds=range(100),
    codecs=("exact", "nf4", "uniform4"),
    block_size: int = 64,
    vocab: int = 64,
) -> dict:
    """Decode the same synthetic sequence through several caches and compare to the exact one.

    Decode inputs are drawn up front (teacher forcing), so outputs differ
    only through the cache. Divergence is ``|o - o_exact| / |o_exact|`` per
    step; argmax agreement compares the last step through a random readout.
    """
    if heads < 1 or d % heads:
        raise ShapeError(f"d={d} is not divisible by heads={heads}")
    if prompt_len < 1 or gen_len < 1:
        raise ShapeError("prompt_len and gen_len must be >= 1")
    seeds = sorted(int(s) for s in seeds)
    if not seeds:
        raise ConfigurationError("at least one seed is required")
    codecs = list(codecs)
    if "exact" not in codecs:
        codecs.insert(0, "exact")

    div = {c: np.zeros((len(seeds), gen_len)) for c in codecs}
    agree = {c: 0 for c in codecs}
    mem = {}
    per_seed = []
    for si, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        w = AttentionWeights.gaussian(d, rng)
        prompt = rng.standard_normal((prompt_len, d))
        steps = rng.standard_normal((gen_len, d))
        readout = rng.standard_normal((d, vocab))
        outs = {}
        for c in codecs:
            outs[c], cache = run_decode(c, w, prompt, steps, heads, block_size)
            mem[c] = cache.memory_bytes()
        ref = outs["exact"]
        ref_norm = np.linalg.norm(ref, axis=1)
        ref_tok = int(np.argmax(ref[-1] @ readout))
        row = {"seed": seed}
        for c in codecs:
            div[c][si] = np.linalg.norm(outs[c] - ref, axis=1) / ref_norm
            agree[c] += int(np.argmax(outs[c][-1] @ readout) == ref_tok)
            row[c] = float(div[c][si].mean())
        per_seed.append(row)

    summary = {
        c: {
            "mean_divergence": float(div[c].mean()),
            "divergence_by_step": [float(v) for v in div[c].mean(axis=0)],
            "argmax_agreement": agree[c] / len(seeds),
            "memory_bytes": int(mem[c]),
        }
        for c in codecs
    }
    return {
        "kind": "simulate_decode",
        "config": {
            "d": d,
            "heads": heads,
            "prompt_len": prompt_len,
            "gen_len": gen_len,
            "block_size": block_size,
            "vocab": vocab,
            "codecs": codecs,
        },
        "seeds": seeds,
        "codecs": summary,
        "per_seed": per_seed,
    }
