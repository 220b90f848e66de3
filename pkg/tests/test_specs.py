import pytest
from hypothesis import given, strategies as st

from pipesim.errors import ConfigurationError
from pipesim.specs import (
    GB,
    GiB,
    ClusterSpec,
    ModelSpec,
    get_hardware,
    get_model,
    kv_bytes_per_token,
    model_from_dict,
    partition_model,
    pipeline_kv_capacity_tokens,
    tensor_parallel_kv_capacity_tokens,
    total_kv_bytes,
)

UNIT = ModelSpec("unit", 1, 1, 1, 1, 1, 1)


def test_llama30b_kv_per_token():
    assert kv_bytes_per_token(get_model("llama-30b")) == 1_597_440
    assert kv_bytes_per_token(get_model("llama-30b")) / 2**20 == pytest.approx(1.52, rel=0.01)


def test_unit_model():
    assert kv_bytes_per_token(UNIT) == 2
    assert total_kv_bytes(UNIT, 10, 10) == 200


def test_gqa_70b():
    m = get_model("llama2-70b")
    assert kv_bytes_per_token(m) == 327_680
    mha = ModelSpec("mha", 80, 64, 64, 8192, 2, m.param_bytes)
    assert kv_bytes_per_token(m) * 8 == kv_bytes_per_token(mha)


def test_total_for_400_requests_of_300_tokens():
    assert total_kv_bytes(get_model("30b"), 400, 300) / GiB == pytest.approx(178, rel=0.01)
    assert total_kv_bytes(get_model("30b"), 0, 123) == 0


@pytest.mark.parametrize("layers,stages,expected", [(40, 4, [10] * 4), (80, 3, [27, 27, 26]), (8, 1, [8])])
def test_partition_examples(layers, stages, expected):
    m = ModelSpec("m", layers, 8, 8, 64, 2, GB)
    assert partition_model(m, stages) == expected


@given(st.integers(1, 200), st.data())
def test_partition_properties(layers, data):
    stages = data.draw(st.integers(1, layers))
    parts = partition_model(ModelSpec("m", layers, 1, 1, 1, 2, GB), stages)
    assert sum(parts) == layers and len(parts) == stages
    assert max(parts) - min(parts) <= 1
    assert parts == sorted(parts, reverse=True)


def test_partition_too_many_stages():
    with pytest.raises(ConfigurationError, match="num_stages <= num_layers"):
        partition_model(ModelSpec("m", 4, 1, 1, 1, 2, GB), 5)


@given(st.integers(1, 100), st.sampled_from([1, 2, 4]), st.sampled_from([(8, 8), (8, 2), (8, 1)]))
def test_kv_linearity(layers, dtype, heads):
    h, kv = heads
    m = ModelSpec("m", layers, h, kv, 64 * h, dtype, GB)
    base = ModelSpec("m", 1, h, h, 64 * h, 1, GB)
    assert kv_bytes_per_token(m) * h == kv_bytes_per_token(base) * layers * dtype * kv


@pytest.mark.parametrize("kwargs", [
    dict(num_layers=0), dict(num_kv_heads=3), dict(hidden_size=100), dict(dtype_bytes=0),
])
def test_model_invariants(kwargs):
    fields = dict(name="m", num_layers=4, num_heads=8, num_kv_heads=8, hidden_size=64, dtype_bytes=2, param_bytes=GB)
    fields.update(kwargs)
    with pytest.raises(ConfigurationError):
        ModelSpec(**fields)


def test_presets_and_overrides():
    a100 = get_hardware("a100")
    assert (a100.flops_per_s, a100.mem_bw, a100.mem_capacity) == (312e12, 1935 * GB, 80 * GB)
    l20 = get_hardware("L20")
    assert (l20.flops_per_s, l20.mem_bw, l20.mem_capacity, l20.allreduce_bw) == (119.5e12, 864 * GB, 48 * GB, 14.65 * GB)
    assert l20.p2p_bw == l20.allreduce_bw and l20.p2p_latency == 20e-6
    assert model_from_dict({"preset": "13b", "num_layers": 20}).num_layers == 20
    with pytest.raises(ConfigurationError):
        get_model("gpt-5")


def test_model_too_large_for_memory():
    with pytest.raises(ConfigurationError, match="does not fit"):
        pipeline_kv_capacity_tokens(get_model("70b"), ClusterSpec(get_hardware("a100"), 1))


def test_capacities():
    m = get_model("32b")
    cl = ClusterSpec(get_hardware("a100"), 4)
    per_stage_bytes = 80 * GB - 16 * GB - 4 * GB
    assert pipeline_kv_capacity_tokens(m, cl) == int(per_stage_bytes / (kv_bytes_per_token(m) / 4))
    assert tensor_parallel_kv_capacity_tokens(m, cl) == int(4 * per_stage_bytes // kv_bytes_per_token(m))
