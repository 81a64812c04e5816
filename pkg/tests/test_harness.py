from fractions import Fraction

import jsonschema
import pytest

from nqkv import schemas
from nqkv.errors import ConfigurationError, RangeError, ShapeError
from nqkv.harness import MODEL_PRESETS, ModelSpec, error_benchmark, kv_memory_model, simulate_decode

OPT175 = MODEL_PRESETS["opt-175b"]


def test_memory_formula():
    spec = ModelSpec("toy", 2, 8, 100)
    r = kv_memory_model(spec, 3, 5)
    assert r["kv_bytes"] == 2 * 2 * 3 * 5 * 8 * 2
    assert r["weight_bytes"] == 200
    jsonschema.validate(r, schemas.MEMORY_REPORT)


@pytest.mark.parametrize("field", ["batch", "seqlen"])
def test_memory_linear(field):
    base = dict(batch=4, seqlen=128)
    one = kv_memory_model(OPT175, **base)["kv_bytes"]
    base[field] *= 3
    assert kv_memory_model(OPT175, **base)["kv_bytes"] == 3 * one


def test_effective_bits_exact():
    nf = OPT175.with_kv(4, 256, 32)
    assert nf.kv_effective_bits == Fraction(33, 8)
    ratio = Fraction(kv_memory_model(nf, 64, 8192)["kv_bytes"], kv_memory_model(OPT175, 64, 8192)["kv_bytes"])
    assert ratio == Fraction(4125, 16000)


@pytest.mark.parametrize("batch", [0, -1, 1.5, True])
def test_memory_rejects_bad_batch(batch):
    with pytest.raises(ConfigurationError):
        kv_memory_model(OPT175, batch, 10)


def test_memory_overflow():
    with pytest.raises(RangeError):
        kv_memory_model(OPT175, 2**40, 2**20)


def test_model_spec_coerces_integral_float():
    assert ModelSpec("m", 1, 1, 1.75e11).num_params == 175_000_000_000
    with pytest.raises(ConfigurationError):
        ModelSpec("m", 1, 1, 1.5)


def test_error_benchmark_orderings():
    r = error_benchmark(block_size=64, num_blocks=500, seeds=(3, 1), distributions=("normal", "uniform", "zero"))
    jsonschema.validate(r, schemas.ERROR_BENCHMARK)
    res = r["results"]
    assert r["seeds"] == [1, 3]
    assert res["normal"]["nf4"]["mean_rmse"] < res["normal"]["uniform4"]["mean_rmse"]
    assert res["uniform"]["nf4"]["mean_rmse"] > res["uniform"]["uniform4"]["mean_rmse"]
    assert res["zero"]["nf4"]["mean_rmse"] == 0.0 and res["zero"]["rmse_ratio"] is None


def test_error_benchmark_seed_order_irrelevant():
    a = error_benchmark(num_blocks=50, seeds=(0, 1), distributions=("laplace",))
    b = error_benchmark(num_blocks=50, seeds=(1, 0), distributions=("laplace",))
    assert a == b


def test_error_benchmark_rejects_unknown():
    with pytest.raises(ConfigurationError):
        error_benchmark(num_blocks=5, distributions=("cauchy",))


def test_simulate_small():
    r = simulate_decode(d=32, heads=2, prompt_len=4, gen_len=5, seeds=[2, 0, 1], block_size=16)
    jsonschema.validate(r, schemas.SIMULATION)
    assert r["seeds"] == [0, 1, 2]
    assert [row["seed"] for row in r["per_seed"]] == [0, 1, 2]
    assert r["codecs"]["exact"]["mean_divergence"] == 0.0
    assert r["codecs"]["exact"]["argmax_agreement"] == 1.0
    assert len(r["codecs"]["nf4"]["divergence_by_step"]) == 5
    assert r["codecs"]["nf4"]["memory_bytes"] == r["codecs"]["uniform4"]["memory_bytes"]


def test_simulate_memory_grows_with_generation():
    mem = [
        simulate_decode(d=16, heads=2, prompt_len=2, gen_len=g, seeds=[0], block_size=16)["codecs"]["nf4"]["memory_bytes"]
        for g in (1, 2, 5)
    ]
    assert mem[0] < mem[1] < mem[2]


def test_simulate_shape_error():
    with pytest.raises(ShapeError):
        simulate_decode(d=10, heads=3, seeds=[0])
