import json

import jsonschema
import numpy as np
import pytest

from nqkv import schemas
from nqkv.cli import main
from nqkv.formats import write_raw


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_codebook_text_and_json(capsys):
    code, out, _ = run(capsys, "codebook", "--bits", 4)
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 16 and lines[7].split() == ["7", "0.0000000000"]
    code, out, _ = run(capsys, "codebook", "--bits", 4, "--json")
    doc = json.loads(out)
    jsonschema.validate(doc, schemas.CODEBOOK)
    assert doc["zero_index"] == 7 and doc["codepoints"][0] == -1.0


def test_codebook_bad_bits(capsys):
    code, _, err = run(capsys, "codebook", "--bits", 12)
    assert code == 2 and "configuration error" in err


def test_quantize_dequantize(tmp_path, capsys):
    m = np.random.default_rng(0).standard_normal((4, 40)).astype(np.float32)
    raw, nqt, back = tmp_path / "a.raw", tmp_path / "a.nqt", tmp_path / "b.raw"
    write_raw(raw, m)
    code, out, _ = run(capsys, "quantize", "--in", raw, "--out", nqt, "--block-size", 16, "--bits", 4)
    assert code == 0
    doc = json.loads(out)
    jsonschema.validate(doc, schemas.TENSOR_SUMMARY)
    assert doc["bytes"] == 4 * 4 * 3 + 4 * 20
    assert nqt.stat().st_size > doc["bytes"]
    code, out, _ = run(capsys, "dequantize", "--in", nqt, "--out", back)
    assert code == 0
    jsonschema.validate(json.loads(out), schemas.TENSOR_SUMMARY)


def test_quantize_bad_input(tmp_path, capsys):
    bad = tmp_path / "bad.raw"
    bad.write_bytes(b'{"rows":2,"cols":2}\n' + b"\x00" * 5)
    code, _, err = run(capsys, "quantize", "--in", bad, "--out", tmp_path / "x.nqt")
    assert code == 3 and "expected 16 bytes" in err
    code, _, _ = run(capsys, "dequantize", "--in", tmp_path / "missing.nqt", "--out", tmp_path / "y.raw")
    assert code == 3


def test_analyze(tmp_path, capsys):
    raw = tmp_path / "tok.raw"
    write_raw(raw, np.random.default_rng(1).standard_normal((2, 4096)).astype(np.float32))
    code, out, _ = run(capsys, "analyze", "--in", raw, "--block-size", 256, "--alpha", 0.05)
    assert code == 0
    doc = json.loads(out)
    jsonschema.validate(doc, schemas.NORMALITY_REPORT)
    assert len(doc) == 16
    code, out, _ = run(capsys, "analyze", "--in", raw, "--block-size", 256, "--pooled", "--pretty")
    assert "pvalue" in out.splitlines()[0]
    code, _, _ = run(capsys, "analyze", "--in", raw, "--block-size", 256, "--token", 9)
    assert code == 2


def test_memsize(tmp_path, capsys):
    code, out, _ = run(capsys, "memsize", "--model", "opt-175b", "--batch", 64, "--seqlen", 8192)
    doc = json.loads(out)
    jsonschema.validate(doc, schemas.MEMORY_REPORT)
    assert doc["kv_effective_bits"] == 16.0
    spec = tmp_path / "m.json"
    spec.write_text(json.dumps({"name": "t", "num_layers": 2, "hidden_size": 8, "num_params": 64}))
    code, out, _ = run(capsys, "memsize", "--model", spec, "--batch", 1, "--seqlen", 1, "--kv-bits", 4, "--block-size", 8)
    doc = json.loads(out)
    assert doc["kv_effective_bits"] == 8.0  # 4 + 32/8
    assert doc["kv_bytes"] == 32


@pytest.mark.parametrize(
    "argv,code",
    [
        (["memsize", "--model", "nope", "--batch", "1", "--seqlen", "1"], 2),
        (["memsize", "--model", "opt-175b", "--batch", "0", "--seqlen", "1"], 2),
        (["memsize", "--model", "opt-175b", "--batch", str(2**40), "--seqlen", str(2**20)], 2),
        (["bench", "--blocks", "5", "--dist", "cauchy"], 2),
        (["simulate", "--d", "10", "--heads", "3", "--seeds", "1"], 2),
    ],
)
def test_exit_codes(capsys, argv, code):
    assert run(capsys, *argv)[0] == code


def test_memsize_malformed_json(tmp_path, capsys):
    spec = tmp_path / "m.json"
    spec.write_text("{not json")
    assert run(capsys, "memsize", "--model", spec, "--batch", 1, "--seqlen", 1)[0] == 3


def test_bench_and_simulate(capsys):
    code, out, _ = run(capsys, "bench", "--blocks", 200, "--seeds", 2, "--block-size", 64)
    assert code == 0
    jsonschema.validate(json.loads(out), schemas.ERROR_BENCHMARK)
    code, out, _ = run(capsys, "simulate", "--d", 16, "--heads", 2, "--prompt", 3, "--gen", 3, "--seeds", 2, "--block-size", 8)
    assert code == 0
    doc = json.loads(out)
    jsonschema.validate(doc, schemas.SIMULATION)
    assert doc["seeds"] == [0, 1]
    code, out, _ = run(capsys, "simulate", "--d", 16, "--heads", 2, "--prompt", 3, "--gen", 3, "--seeds", 1, "--pretty")
    assert out.splitlines()[1].startswith("exact")
