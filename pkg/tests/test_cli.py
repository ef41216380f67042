"""Tests for config parsing and the command-line interface."""

import csv
import json
from pathlib import Path

import pytest

from gpcma.cli import CSV_COLUMNS, main, read_trace_csv
from gpcma.config import ConfigError, parse_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = {"objective": {"kind": "sphere", "dimension": 2, "budget": 100}}


def minimal_text(**overrides):
    doc = {**MINIMAL, **overrides}
    return json.dumps(doc)


class TestParseConfig:
    def test_minimal_fills_defaults(self):
        cfg = parse_config(minimal_text())
        assert cfg.cma.population == 8
        assert cfg.cma.sigma0 == 1.0
        assert cfg.cma.update == "standard"
        assert cfg.cma.mean0 == [0.0, 0.0]
        assert cfg.gp.kernel.kind == "squared_exponential"
        assert cfg.gp.mean_prior == "deterministic"
        assert cfg.acquisition.kind == "ei"
        assert cfg.strategy.kind == "none"
        assert cfg.execution.seeds == [0]
        assert cfg.execution.stagnation_horizon == 50

    def test_unknown_key_rejected_with_path(self):
        doc = {"objective": {"kind": "sphere", "dimension": 2, "budget": 10, "bogus": 1}}
        with pytest.raises(ConfigError, match="objective.bogus"):
            parse_config(json.dumps(doc))

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown field"):
            parse_config(minimal_text(extra={}))

    def test_candidate_condition_cited(self):
        text = minimal_text(strategy={"kind": "basic", "candidates": 8, "clusters": 2})
        with pytest.raises(ConfigError, match=r"lambda < card\{x~_1"):
            parse_config(text)

    def test_alpha_out_of_range(self):
        text = minimal_text(acquisition={"kind": "quantile", "alpha": 1.0})
        with pytest.raises(ConfigError, match=r"alpha must lie in \(0,1\)"):
            parse_config(text)

    def test_missing_required_field(self):
        with pytest.raises(ConfigError, match="objective.budget"):
            parse_config(json.dumps({"objective": {"kind": "sphere", "dimension": 2}}))

    def test_mean0_broadcast_scalar(self):
        cfg = parse_config(minimal_text(cma={"mean0": 2.5}))
        assert cfg.cma.mean0 == [2.5, 2.5]

    def test_mean0_length_checked(self):
        with pytest.raises(ConfigError, match="cma.mean0"):
            parse_config(minimal_text(cma={"mean0": [1.0, 2.0, 3.0]}))

    def test_shift_length_checked(self):
        doc = {"objective": {"kind": "sphere", "dimension": 2, "budget": 10,
                             "shift": [1.0]}}
        with pytest.raises(ConfigError, match="objective.shift"):
            parse_config(json.dumps(doc))

    def test_strategy_requires_projection_dim(self):
        text = minimal_text(strategy={"kind": "low_dim_projection"})
        with pytest.raises(ConfigError, match="strategy.projection_dim"):
            parse_config(text)

    def test_invalid_json_reported(self):
        with pytest.raises(ConfigError, match="not valid JSON"):
            parse_config("{nope")

    def test_round_trip_canonical_form(self):
        for name in ("sphere_basic.json", "sphere_generation_based.json"):
            original = parse_config((CONFIG_DIR / name).read_text())
            reparsed = parse_config(original.to_json())
            assert reparsed == original

    def test_round_trip_minimal(self):
        original = parse_config(minimal_text())
        assert parse_config(original.to_json()) == original

    def test_generation_based_defaults_validate(self):
        cfg = parse_config(minimal_text(strategy={"kind": "generation_based", "probes": 2}))
        strategy = cfg.build_strategy()
        assert strategy.probes == 2
        assert strategy.probes_max == cfg.cma.population - 1


class TestCliRun:
    def test_run_shipped_example(self, tmp_path, capsys):
        out = tmp_path / "runs"
        code = main(["run", "--config", str(CONFIG_DIR / "sphere_basic.json"),
                     "--out", str(out)])
        assert code == 0
        csv_files = sorted(out.glob("trace_s*.csv"))
        assert [p.name for p in csv_files] == ["trace_s0.csv", "trace_s1.csv"]
        assert (out / "traces.jsonl").exists()
        assert (out / "config.json").exists()
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["runs"] == 2

    def test_csv_schema(self, tmp_path):
        out = tmp_path / "runs"
        main(["run", "--config", str(CONFIG_DIR / "sphere_basic.json"),
              "--out", str(out), "--seed", "0"])
        with open(out / "trace_s0.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == CSV_COLUMNS
        trace = read_trace_csv(out / "trace_s0.csv")
        assert len(rows) == len(trace.records) + 1  # header + one row per generation

    def test_missing_config_exits_2(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        err = capsys.readouterr().err
        assert "usage" in err

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"objective": {"kind": "sphere"}}))
        code = main(["run", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_byte_identical_reruns(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(minimal_text(
            objective={"kind": "sphere", "dimension": 2, "budget": 80},
            strategy={"kind": "basic", "candidates": 32, "clusters": 4},
            cma={"mean0": [2.0, 2.0]},
        ))
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["run", "--config", str(cfg), "--out", str(out1)])
        main(["run", "--config", str(cfg), "--out", str(out2)])
        assert (out1 / "trace_s0.csv").read_bytes() == (out2 / "trace_s0.csv").read_bytes()
        assert (out1 / "traces.jsonl").read_bytes() == (out2 / "traces.jsonl").read_bytes()

    def test_parallel_jobs_match_serial(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(minimal_text(
            objective={"kind": "sphere", "dimension": 2, "budget": 64},
            execution={"seeds": [0, 1, 2]},
        ))
        serial, parallel = tmp_path / "serial", tmp_path / "parallel"
        main(["run", "--config", str(cfg), "--out", str(serial), "--jobs", "1"])
        main(["run", "--config", str(cfg), "--out", str(parallel), "--jobs", "3"])
        for seed in (0, 1, 2):
            name = f"trace_s{seed}.csv"
            assert (serial / name).read_bytes() == (parallel / name).read_bytes()


class TestCliSummarizeCompare:
    @pytest.fixture()
    def run_dir(self, tmp_path):
        out = tmp_path / "runs"
        main(["run", "--config", str(CONFIG_DIR / "sphere_basic.json"),
              "--out", str(out)])
        return out

    def test_summarize_writes_json(self, run_dir, tmp_path, capsys):
        out_path = tmp_path / "summary.json"
        code = main(["summarize", "--in", str(run_dir), "--out", str(out_path)])
        assert code == 0
        summary = json.loads(out_path.read_text())
        assert summary["runs"] == 2
        assert set(summary["best_fitness"]) == {"q25", "median", "q75"}

    def test_summarize_missing_dir(self, tmp_path, capsys):
        code = main(["summarize", "--in", str(tmp_path / "nothing"),
                     "--out", str(tmp_path / "s.json")])
        assert code == 2

    def test_compare_against_self_is_zero(self, run_dir, capsys):
        code = main(["compare", "--a", str(run_dir), "--b", str(run_dir)])
        assert code == 0
        out = capsys.readouterr().out
        assert "median diff 0" in out

    def test_compare_disjoint_seeds(self, run_dir, tmp_path, capsys):
        code = main(["compare", "--a", str(run_dir), "--b", str(tmp_path)])
        assert code == 2
