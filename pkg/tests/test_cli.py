import csv
import json

import pytest

from pipesim.cli import main
from pipesim.config import list_scenarios, load_scenario
from pipesim.workload import load_trace

TINY_CONFIG = """
name = "tiny"
seed = 3
policy = "TDPipe"
devices = 2

[workload]
count = 60
input = {{ kind = "uniform", lo = 16, hi = 128 }}
output = {{ kind = "uniform", lo = 1, hi = 128 }}

[model]
preset = "llama2-13b"

[hardware]
preset = "a100"
{extra}
"""


def write_config(tmp_path, extra="", name="tiny.toml"):
    path = tmp_path / name
    path.write_text(TINY_CONFIG.format(extra=extra))
    return path


def test_run_preset_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "smoke"
    assert main(["run", "smoke", "--out", str(out)]) == 0
    for name in ("config.toml", "meta.json", "summary.json", "trace.json", "kv_timeline.csv"):
        assert (out / name).is_file(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["policy"] == "TDPipe" and summary["num_devices"] == 2
    assert json.loads((out / "trace.json").read_text())["traceEvents"]
    assert (out / "config.toml").read_text() == load_scenario("smoke").source_text
    assert "tokens/s" in capsys.readouterr().out


def test_run_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "smoke", "--out", str(tmp_path / d)]) == 0
    for name in ("summary.json", "trace.json", "kv_timeline.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_no_trace_flag(tmp_path):
    assert main(["run", str(write_config(tmp_path)), "--out", str(tmp_path / "o"), "--no-trace"]) == 0
    assert not (tmp_path / "o" / "trace.json").exists()
    assert (tmp_path / "o" / "summary.json").exists()


def test_too_many_stages_is_diagnosed(tmp_path, capsys):
    code = main(["run", "smoke", "--devices", "100", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "num_stages <= num_layers" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_empty_policies_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["compare", "smoke", "--policies"])
    assert exc.value.code == 2
    assert "--policies" in capsys.readouterr().err


def test_unknown_policy_names_the_field(capsys):
    assert main(["run", "smoke", "--policy", "FAST"]) == 2
    assert "config field 'policy'" in capsys.readouterr().err


@pytest.mark.parametrize("extra, field", [
    ("[cost]\ncompute_efficiency = -1", "cost"),
    ("[policy_params]\nkv_ratio = 2.0", "kv_ratio"),
    ("[policy_params]\nbogus = 1", "policy_params.bogus"),
])
def test_bad_fields_are_named(tmp_path, capsys, extra, field):
    assert main(["run", str(write_config(tmp_path, extra)), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert err.startswith("pipesim: error:") and field in err


def test_missing_config_file(tmp_path, capsys):
    code = main(["run", str(tmp_path / "nope.toml")])
    assert code in (1, 2)
    assert "nope" in capsys.readouterr().err


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PIPESIM_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["run", str(write_config(tmp_path))]) == 0
    assert (tmp_path / "env" / "tiny" / "summary.json").is_file()
    # An explicit flag still wins.
    assert main(["run", str(write_config(tmp_path)), "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "summary.json").is_file()


def test_gen_workload_and_replay(tmp_path):
    trace = tmp_path / "w.csv"
    assert main(["gen-workload", str(trace), "--count", "25", "--input", "uniform:10,50",
                 "--output", "constant:7", "--seed", "4"]) == 0
    rs = load_trace(trace)
    assert len(rs) == 25 and all(10 <= r.input_len <= 50 and r.true_output_len == 7 for r in rs)
    cfg = tmp_path / "replay.toml"
    cfg.write_text(TINY_CONFIG.format(extra="").replace(
        'count = 60\ninput = { kind = "uniform", lo = 16, hi = 128 }\noutput = { kind = "uniform", lo = 1, hi = 128 }',
        'trace = "w.csv"'))
    assert main(["run", str(cfg), "--out", str(tmp_path / "r")]) == 0
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert summary["input_tokens"] == rs.total_input_tokens


def test_gen_workload_bad_distribution(tmp_path, capsys):
    assert main(["gen-workload", str(tmp_path / "w.csv"), "--input", "gamma:1,2"]) == 2
    assert "gamma" in capsys.readouterr().err


def test_list_presets(capsys):
    assert main(["list-presets"]) == 0
    out = capsys.readouterr().out
    for name, _ in list_scenarios():
        assert name in out
    assert "qwen2.5-32b" in out and "TDPipe" in out


def test_compare_grid(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "cmp"
    assert main(["compare", str(cfg), "--policies", "TDPipe", "PP_SB", "TP_HB",
                 "--devices", "1", "2", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "comparison.csv").open()))
    assert [(r["policy"], r["devices"]) for r in rows] == [
        ("PP_SB", "1"), ("PP_SB", "2"), ("TDPipe", "1"), ("TDPipe", "2"), ("TP_HB", "1"), ("TP_HB", "2")]
    assert all(float(r["speedup_vs_1"]) == 1.0 for r in rows if r["devices"] == "1")
    assert len(list((out / "summaries").iterdir())) == 6


def test_compare_records_infeasible_cells(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "cmp"
    assert main(["compare", str(cfg), "--policies", "PP_SB", "--devices", "2", "100", "--out", str(out)]) == 0
    assert "num_stages <= num_layers" in (out / "skipped.csv").read_text()
    assert len(list(csv.DictReader((out / "comparison.csv").open()))) == 1


def test_sweep(tmp_path):
    extra = '[[sweep]]\nlabel = "on"\n\n[[sweep]]\nlabel = "off"\npolicy_params = { stealing = false }\n'
    out = tmp_path / "sw"
    assert main(["sweep", str(write_config(tmp_path, extra)), "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert [r["label"] for r in rows] == ["on", "off"]
    assert float(rows[0]["relative_to_first"]) == 1.0


def test_sweep_without_cells_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", str(write_config(tmp_path))])
    assert exc.value.code == 2


def test_scenario_name_wins_over_same_named_directory(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "smoke").mkdir()
    assert main(["run", "smoke", "--out", str(tmp_path / "o")]) == 0
