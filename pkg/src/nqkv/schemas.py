"""JSON Schemas (draft 2020-12) for every report the CLI prints."""

_NUM = {"type": "number"}
_INT = {"type": "integer", "minimum": 0}
_SEEDS = {"type": "array", "items": {"type": "integer"}}

CODEBOOK = {
    "type": "object",
    "required": ["codebook_id", "bits", "codepoints", "zero_index"],
    "properties": {
        "codebook_id": {"type": "string"},
        "bits": {"type": "integer", "minimum": 2, "maximum": 8},
        "codepoints": {"type": "array", "items": {"type": "number", "minimum": -1, "maximum": 1}},
        "zero_index": _INT,
    },
}

TENSOR_SUMMARY = {
    "type": "object",
    "required": ["rows", "cols", "out"],
    "properties": {
        "rows": _INT,
        "cols": _INT,
        "block_size": _INT,
        "bits": _INT,
        "codebook_id": {"type": "string"},
        "bytes": _INT,
        "out": {"type": "string"},
    },
}

NORMALITY_REPORT = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["block_index", "n", "skew_z", "kurt_z", "k2", "p_value", "normal_at_alpha"],
        "properties": {
            "block_index": _INT,
            "n": {"type": "integer", "minimum": 20},
            "skew_z": _NUM,
            "kurt_z": _NUM,
            "k2": {"type": "number", "minimum": 0},
            "p_value": {"type": "number", "minimum": 0, "maximum": 1},
            "normal_at_alpha": {"type": "boolean"},
        },
        "additionalProperties": False,
    },
}

MEMORY_REPORT = {
    "type": "object",
    "required": ["model", "batch", "seqlen", "kv_effective_bits", "kv_bytes", "weight_bytes", "kv_fraction"],
    "properties": {
        "model": {"type": "string"},
        "batch": {"type": "integer", "minimum": 1},
        "seqlen": {"type": "integer", "minimum": 1},
        "kv_effective_bits": _NUM,
        "kv_bytes": _INT,
        "weight_bytes": _INT,
        "kv_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "kv_to_weight_ratio": _NUM,
    },
}

_CODEC_ERRORS = {
    "type": "object",
    "required": ["mean_rmse", "max_error"],
    "properties": {"mean_rmse": {"type": "number", "minimum": 0}, "max_error": {"type": "number", "minimum": 0}},
}

ERROR_BENCHMARK = {
    "type": "object",
    "required": ["kind", "config", "seeds", "results"],
    "properties": {
        "kind": {"const": "error_benchmark"},
        "config": {
            "type": "object",
            "required": ["block_size", "bits", "num_blocks", "distributions", "codecs"],
        },
        "seeds": _SEEDS,
        "results": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["rmse_ratio"],
                "properties": {"rmse_ratio": {"type": ["number", "null"]}},
                "additionalProperties": _CODEC_ERRORS,
            },
        },
    },
}

SIMULATION = {
    "type": "object",
    "required": ["kind", "config", "seeds", "codecs", "per_seed"],
    "properties": {
        "kind": {"const": "simulate_decode"},
        "config": {"type": "object", "required": ["d", "heads", "prompt_len", "gen_len", "block_size"]},
        "seeds": _SEEDS,
        "codecs": {
            "type": "object",
            "required": ["exact"],
            "additionalProperties": {
                "type": "object",
                "required": ["mean_divergence", "divergence_by_step", "argmax_agreement", "memory_bytes"],
                "properties": {
                    "mean_divergence": {"type": "number", "minimum": 0},
                    "divergence_by_step": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    "argmax_agreement": {"type": "number", "minimum": 0, "maximum": 1},
                    "memory_bytes": _INT,
                },
            },
        },
        "per_seed": {"type": "array", "items": {"type": "object", "required": ["seed"]}},
    },
}
