"""Block-wise NormalFloat quantization of transformer key/value caches."""

from nqkv._backend import BACKEND
from nqkv.attention import AttentionWeights, DecodeOutput, decode_step, prefill, project_qkv
from nqkv.cache import DenseKvCache, KvCache, KvCacheConfig
from nqkv.codec import (
    Codebook,
    QuantizedBlock,
    QuantizedTensor,
    build_nf_codebook,
    build_uniform_codebook,
    decode_tensor,
    dequantize_block,
    encode_tensor,
    get_codebook,
    normal_quantile,
    quantize_block,
)
from nqkv.normality import NormalityReport, block_normality_report, dap_test, qq_points, standardize

__all__ = [
    "BACKEND",
    "AttentionWeights",
    "Codebook",
    "DecodeOutput",
    "DenseKvCache",
    "KvCache",
    "KvCacheConfig",
    "NormalityReport",
    "QuantizedBlock",
    "QuantizedTensor",
    "block_normality_report",
    "build_nf_codebook",
    "build_uniform_codebook",
    "dap_test",
    "decode_step",
    "decode_tensor",
    "dequantize_block",
    "encode_tensor",
    "get_codebook",
    "normal_quantile",
    "prefill",
    "project_qkv",
    "qq_points",
    "quantize_block",
    "standardize",
]
