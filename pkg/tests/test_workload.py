import math

import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from pipesim.errors import ConfigurationError, TraceParseError, ValidationError
from pipesim.workload import LengthDist, Request, RequestSet, generate_workload, load_trace, save_trace


def test_constant_lengths():
    rs = generate_workload(4, LengthDist.constant(8), LengthDist.constant(4), seed=7)
    assert [(r.input_len, r.true_output_len) for r in rs] == [(8, 4)] * 4
    assert [r.id for r in rs] == [0, 1, 2, 3]
    assert all(r.arrival == 0 for r in rs)


def test_uniform_bounds_and_replay():
    a = generate_workload(1000, LengthDist.uniform(1, 1024), LengthDist.uniform(1, 512), seed=1)
    b = generate_workload(1000, LengthDist.uniform(1, 1024), LengthDist.uniform(1, 512), seed=1)
    assert a == b
    assert all(1 <= r.input_len <= 1024 and 1 <= r.true_output_len <= 512 for r in a)
    c = generate_workload(1000, LengthDist.uniform(1, 1024), LengthDist.uniform(1, 512), seed=2)
    assert a != c


def _clamped_lognormal_mean(mu, sigma, hi):
    dist = stats.lognorm(s=sigma, scale=math.exp(mu))
    inner, _ = integrate.quad(lambda x: x * dist.pdf(x), 1, hi, limit=200)
    return inner + 1 * dist.cdf(1) + hi * dist.sf(hi)


def test_lognormal_mean_matches_numeric_oracle():
    rs = generate_workload(5000, LengthDist.lognormal(5.0, 1.0), LengthDist.lognormal(4.5, 1.0), seed=42)
    oracle_in = _clamped_lognormal_mean(5.0, 1.0, 1024)
    oracle_out = _clamped_lognormal_mean(4.5, 1.0, 1024)
    assert rs.mean_input_len() == pytest.approx(oracle_in, rel=0.05)
    assert rs.mean_output_len() == pytest.approx(oracle_out, rel=0.05)


def test_changing_output_dist_keeps_inputs():
    a = generate_workload(50, LengthDist.uniform(1, 100), LengthDist.constant(5), seed=9)
    b = generate_workload(50, LengthDist.uniform(1, 100), LengthDist.uniform(1, 9), seed=9)
    assert [r.input_len for r in a] == [r.input_len for r in b]


@pytest.mark.parametrize("make", [
    lambda: LengthDist.uniform(0, 5),
    lambda: LengthDist.uniform(5, 4),
    lambda: LengthDist.constant(0),
    lambda: LengthDist.lognormal(1.0, 0.0),
    lambda: LengthDist.lognormal(1.0, 1.0, max_len=0),
    lambda: LengthDist.from_dict({"kind": "zipf"}),
])
def test_invalid_distributions(make):
    with pytest.raises(ConfigurationError):
        make()


def test_count_must_be_positive():
    with pytest.raises(ConfigurationError):
        generate_workload(0, LengthDist.constant(1), LengthDist.constant(1), seed=0)


def test_request_invariants():
    with pytest.raises(ValidationError):
        Request(1, 0, 5)
    with pytest.raises(ValidationError):
        Request(1, 5, 0)
    with pytest.raises(ValidationError):
        RequestSet((Request(1, 1, 1), Request(1, 2, 2)))


def test_load_trace_in_order(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("# comment\n1,100,50\n2,200,10\n")
    rs = load_trace(p)
    assert [(r.id, r.input_len, r.true_output_len) for r in rs] == [(1, 100, 50), (2, 200, 10)]
    assert rs.seed is None


def test_empty_trace(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    assert len(load_trace(p)) == 0


def test_zero_output_is_validation_error(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,10,0\n")
    with pytest.raises(ValidationError):
        load_trace(p)


def test_malformed_line_names_line_number(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,10,5\n# ok\n2,x,5\n")
    with pytest.raises(TraceParseError) as ei:
        load_trace(p)
    assert ei.value.line_no == 3
    assert ":3:" in str(ei.value)


def test_duplicate_id_in_trace(tmp_path):
    p = tmp_path / "dup.csv"
    p.write_text("1,10,5\n1,11,6\n")
    with pytest.raises(ValidationError, match="duplicate"):
        load_trace(p)


requests_strategy = st.lists(
    st.tuples(st.integers(1, 5000), st.integers(1, 5000)), min_size=0, max_size=40
).map(lambda pairs: RequestSet(tuple(Request(i * 3 + 1, a, b) for i, (a, b) in enumerate(pairs))))


@settings(max_examples=50, deadline=None)
@given(requests_strategy, st.one_of(st.none(), st.integers(0, 2**31)))
def test_trace_round_trip(tmp_path_factory, rs, seed):
    rs = RequestSet(rs.requests, seed=seed)
    p = tmp_path_factory.mktemp("rt") / "trace.csv"
    save_trace(rs, p)
    assert load_trace(p) == rs
