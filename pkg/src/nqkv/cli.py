"""Command-line entry point: ``nqkv <subcommand> ...``.

Machine output is JSON on stdout; ``--pretty`` switches to a human table.
Exit codes: 0 success, 2 configuration error, 3 data or format error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from nqkv.codec import decode_tensor, encode_tensor, get_codebook
from nqkv.errors import ConfigurationError, DataError, RangeError
from nqkv.formats import ingest_tensor, read_nqt, write_nqt, write_raw
from nqkv.harness import MODEL_PRESETS, ModelSpec, error_benchmark, kv_memory_model, simulate_decode
from nqkv.normality import block_normality_report, format_table

EXIT_CONFIG = 2
EXIT_DATA = 3


def _emit(obj, pretty_text: str | None = None, pretty: bool = False) -> None:
    if pretty and pretty_text is not None:
        print(pretty_text)
    else:
        json.dump(obj, sys.stdout, indent=2 if pretty else None)
        sys.stdout.write("\n")


def cmd_codebook(args) -> None:
    cb = get_codebook(f"{args.family}{args.bits}")
    if args.json:
        _emit({"codebook_id": cb.name, "bits": cb.bits, "codepoints": list(cb.codepoints), "zero_index": cb.zero_index})
    else:
        for i, c in enumerate(cb.codepoints):
            print(f"{i:>3}  {c: .10f}")


def cmd_quantize(args) -> None:
    m = ingest_tensor(args.inp)
    cb = get_codebook(f"{args.family}{args.bits}")
    qt = encode_tensor(m, args.block_size, cb)
    write_nqt(args.out, qt)
    _emit({"rows": qt.rows, "cols": qt.cols, "block_size": qt.block_size, "bits": qt.bits,
           "codebook_id": qt.codebook_id, "bytes": qt.nbytes, "out": args.out})


def cmd_dequantize(args) -> None:
    qt = read_nqt(args.inp)
    m = decode_tensor(qt, get_codebook(qt.codebook_id))
    write_raw(args.out, m.astype(np.float32))
    _emit({"rows": qt.rows, "cols": qt.cols, "out": args.out})


def cmd_analyze(args) -> None:
    m = ingest_tensor(args.inp)
    token = None if args.pooled else args.token
    reports = block_normality_report(m, args.block_size, args.alpha, token=token)
    _emit([r.to_dict() for r in reports], format_table(reports, args.alpha), args.pretty)


def _load_model(ref: str) -> ModelSpec:
    if ref.lower() in MODEL_PRESETS:
        return MODEL_PRESETS[ref.lower()]
    try:
        with open(ref) as f:
            fields = json.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"no model preset or file named {ref!r}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{ref}: {exc}") from None
    try:
        return ModelSpec(**fields)
    except TypeError as exc:
        raise ConfigurationError(f"{ref}: {exc}") from None


def cmd_memsize(args) -> None:
    spec = _load_model(args.model)
    kv_bits = args.kv_bits if args.kv_bits is not None else spec.kv_bits
    block = args.block_size if args.block_size is not None else spec.kv_block_size
    scale_bits = args.scale_bits if args.scale_bits is not None else (0 if kv_bits >= 16 else 32)
    if args.weight_bits is not None:
        spec = ModelSpec(**{**spec.__dict__, "weight_bits": args.weight_bits})
    report = kv_memory_model(spec.with_kv(kv_bits, block, scale_bits), args.batch, args.seqlen)
    text = "\n".join(f"{k:>20}: {v}" for k, v in report.items())
    _emit(report, text, args.pretty)


def _seeds(args) -> range:
    if args.seeds < 1:
        raise ConfigurationError("--seeds must be >= 1")
    return range(args.seed, args.seed + args.seeds)


def cmd_bench(args) -> None:
    report = error_benchmark(args.block_size, args.bits, args.blocks, _seeds(args), args.dist)
    lines = [f"{'distribution':<10} {'nf rmse':>10} {'uniform rmse':>13} {'ratio':>7}"]
    for dist, r in report["results"].items():
        nf, uni = (r[c]["mean_rmse"] for c in report["config"]["codecs"])
        ratio = "-" if r["rmse_ratio"] is None else f"{r['rmse_ratio']:.4f}"
        lines.append(f"{dist:<10} {nf:>10.6f} {uni:>13.6f} {ratio:>7}")
    _emit(report, "\n".join(lines), args.pretty)


def cmd_simulate(args) -> None:
    report = simulate_decode(args.d, args.heads, args.prompt, args.gen, _seeds(args),
                             block_size=args.block_size)
    lines = [f"{'codec':<10} {'mean div':>10} {'argmax agree':>13} {'bytes':>9}"]
    for c, r in report["codecs"].items():
        lines.append(f"{c:<10} {r['mean_divergence']:>10.6f} {r['argmax_agreement']:>13.2f} {r['memory_bytes']:>9}")
    _emit(report, "\n".join(lines), args.pretty)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nqkv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("codebook", help="print a quantization codebook")
    s.add_argument("--bits", type=int, default=4)
    s.add_argument("--family", choices=("nf", "uniform"), default="nf")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_codebook)

    s = sub.add_parser("quantize", help="raw float32 tensor -> .nqt")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--block-size", type=int, default=256)
    s.add_argument("--bits", type=int, default=4)
    s.add_argument("--family", choices=("nf", "uniform"), default="nf")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("dequantize", help=".nqt -> raw float32 tensor")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dequantize)

    s = sub.add_parser("analyze", help="per-block D'Agostino-Pearson normality report")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--block-size", type=int, default=256)
    s.add_argument("--alpha", type=float, default=0.05)
    group = s.add_mutually_exclusive_group()
    group.add_argument("--token", type=int, default=0, help="row to test (default 0)")
    group.add_argument("--pooled", action="store_true", help="pool each block across all rows")
    s.add_argument("--pretty", action="store_true")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("memsize", help="KV cache and weight memory footprint")
    s.add_argument("--model", required=True, help=f"spec JSON file or preset: {', '.join(MODEL_PRESETS)}")
    s.add_argument("--batch", type=int, required=True)
    s.add_argument("--seqlen", type=int, required=True)
    s.add_argument("--kv-bits", type=int)
    s.add_argument("--block-size", type=int)
    s.add_argument("--scale-bits", type=int, help="default 32 below 16-bit KV, else 0")
    s.add_argument("--weight-bits", type=int)
    s.add_argument("--pretty", action="store_true")
    s.set_defaults(func=cmd_memsize)

    s = sub.add_parser("bench", help="codec round-trip error benchmark")
    s.add_argument("--blocks", type=int, default=10_000)
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--block-size", type=int, default=256)
    s.add_argument("--bits", type=int, default=4)
    s.add_argument("--dist", nargs="+", default=["normal", "uniform", "laplace"])
    s.add_argument("--pretty", action="store_true")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("simulate", help="synthetic decode divergence vs an exact cache")
    s.add_argument("--d", type=int, default=128)
    s.add_argument("--heads", type=int, default=4)
    s.add_argument("--prompt", type=int, default=32)
    s.add_argument("--gen", type=int, default=32)
    s.add_argument("--seeds", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--block-size", type=int, default=64)
    s.add_argument("--pretty", action="store_true")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigurationError, RangeError) as exc:
        print(f"nqkv: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"nqkv: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
