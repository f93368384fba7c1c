import os
from pathlib import Path

import pytest

from steinbound import cli, covariance, harness

SMALL_RATE = """
[experiment]
kind = "rate-study"
seed = 7
[model]
d = 2
n_grid = [4, 8, 16]
[estimator]
samples = 2000
block = 500
directions = 8
thresholds = 16
corners = 4
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestConfig:
    def test_defaults_fill_in(self):
        cfg = harness.validate({"experiment": {"kind": "gamma"}})
        assert cfg["reps"] == 10000 and cfg.stem == "gamma"

    def test_every_problem_listed(self):
        raw = {"experiment": {"kind": "knn", "seed": -1, "bogus": 1},
               "model": {"R": -0.5, "n_grid": [8, 4], "p": 6},
               "estimator": {"reps": 0, "method": "grid"}}
        with pytest.raises(harness.ConfigError) as exc:
            harness.validate(raw)
        text = str(exc.value)
        for field in ("experiment.bogus", "experiment.seed", "model.R", "model.n_grid",
                      "model.p", "estimator.reps", "estimator.method"):
            assert field in text
        assert len(exc.value.problems) == 7

    def test_missing_kind(self):
        with pytest.raises(harness.ConfigError, match="experiment.kind: required"):
            harness.validate({})

    def test_hash_ignores_run_section(self):
        a = harness.validate({"experiment": {"kind": "gamma"}})
        b = harness.validate({"experiment": {"kind": "gamma"},
                              "run": {"workers": 4, "output_dir": "elsewhere"}})
        c = harness.validate({"experiment": {"kind": "gamma", "seed": 1}})
        assert a.config_hash == b.config_hash != c.config_hash

    def test_toml_roundtrip(self, tmp_path):
        cfg = harness.load_config(write(tmp_path, SMALL_RATE))
        again = harness.load_config(write(tmp_path, cfg.to_toml(), "again.toml"))
        assert again.values == cfg.values

    def test_describe_lists_fields_and_columns(self):
        text = harness.describe()
        for f in harness.SCHEMA:
            assert f"{f.section}.{f.name}" in text
        assert ", ".join(harness.CSV_COLUMNS) in text


class TestOutput:
    def test_atomic_write_leaves_no_temp(self, tmp_path):
        path = tmp_path / "sub" / "x.csv"
        harness.atomic_write(str(path), "a\n")
        harness.atomic_write(str(path), "b\n")
        assert path.read_text() == "b\n"
        assert os.listdir(path.parent) == ["x.csv"]

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(harness.OUTPUT_ENV, str(tmp_path / "envdir"))
        assert harness.output_dir() == str(tmp_path / "envdir")
        assert harness.output_dir("given") == "given"

    def test_float_format_roundtrips(self):
        assert float(harness._fmt(0.1 + 0.2)) == 0.1 + 0.2
        assert harness._fmt(None) == "" and harness._fmt(True) == "true"

    def test_rate_study_byte_identical(self, tmp_path):
        cfg = harness.load_config(write(tmp_path, SMALL_RATE))
        r1 = harness.run(cfg, str(tmp_path / "a"), workers=1)
        r2 = harness.run(cfg, str(tmp_path / "b"), workers=2)
        r3 = harness.run(cfg, str(tmp_path / "c"), workers=1)
        blobs = {open(r.csv_path, "rb").read() for r in (r1, r2, r3)}
        assert len(blobs) == 1
        header = blobs.pop().decode().splitlines()[0]
        assert header == ",".join(harness.CSV_COLUMNS)
        assert {r["config_hash"] for r in r1.rows} == {cfg.config_hash}


class TestSelftest:
    def test_all_pass(self, tmp_path):
        results, path = harness.selftest(0, 1, str(tmp_path))
        assert [r.name for r in results if not r.passed] == []
        assert os.path.exists(path)

    def test_fault_injection_named(self, tmp_path, monkeypatch):
        monkeypatch.setattr(covariance, "kappa", lambda m: 1.0)
        results, _ = harness.selftest(0, 1, str(tmp_path), names=["kappa-table"])
        assert not results[0].passed and results[0].name == "kappa-table"

    def test_crashing_check_fails(self, tmp_path, monkeypatch):
        def boom(seed):
            raise RuntimeError("broken")
        monkeypatch.setitem(harness.CHECKS, "kappa-table", boom)
        results, _ = harness.selftest(0, 1, str(tmp_path), names=["kappa-table"])
        assert not results[0].passed and "broken" in results[0].detail


class TestCli:
    def test_invalid_config_exit_2_no_output(self, tmp_path, capsys):
        cfg = write(tmp_path, '[experiment]\nkind = "gamma"\n[model]\nR = -1.0\nd = 0\n')
        out = tmp_path / "out"
        assert cli.main(["run", cfg, "--output-dir", str(out)]) == 2
        err = capsys.readouterr().err
        assert "model.R" in err and "model.d" in err
        assert not out.exists()

    def test_unreadable_config(self, tmp_path):
        assert cli.main(["run", str(tmp_path / "missing.toml")]) == 2

    def test_run_writes_csv(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL_RATE)
        assert cli.main(["run", cfg, "--output-dir", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "rate-study.csv").exists()

    def test_describe(self, capsys):
        assert cli.main(["describe"]) == 0
        assert "experiment.kind" in capsys.readouterr().out

    def test_selftest_failure_exit_1(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setattr(covariance, "kappa", lambda m: 1.0)
        assert cli.main(["selftest", "--output-dir", str(tmp_path)]) == 1
        assert "kappa-table" in capsys.readouterr().err


def test_demo_configs_validate():
    demos = Path(__file__).resolve().parents[1] / "demos"
    paths = sorted(demos.glob("*.toml"))
    assert paths
    kinds = {harness.load_config(str(p)).kind for p in paths}
    assert kinds == set(harness.KINDS)
