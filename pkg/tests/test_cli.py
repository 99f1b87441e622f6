import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_force_assignment
from spiked_transport import experiments
from spiked_transport.cli import main
from spiked_transport.config import ExperimentConfig, load_config, parse_config
from spiked_transport.errors import ConfigurationError, OutputLockedError
from spiked_transport.measures import DiscreteMeasure

RATES = """\
kind: rates_plugin
seed: 11
p: 1
sampler:
  family: uniform_cube
  dim: 2
n_list: [20, 40]
replicates: 3
"""

SPIKE = """\
kind: spike_recovery
seed: 4
p: 2
model:
  kind: spiked_gaussian
  d: 3
  beta: 1.0
n_list: [100]
replicates: 2
wpp:
  restarts: 2
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def tiny_csv(tmp_path, name, points):
    DiscreteMeasure.uniform(points).to_csv(tmp_path / name)
    return tmp_path / name


def read_rows(path):
    return list(csv.DictReader(io.StringIO(Path(path).read_text())))


class TestSolve:
    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_matches_brute_force(self, tmp_path, capsys, p):
        rng = np.random.default_rng(int(p))
        x, y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
        code = main(["solve", str(tiny_csv(tmp_path, "a.csv", x)), str(tiny_csv(tmp_path, "b.csv", y)), "-p", str(p)])
        assert code == 0
        assert float(capsys.readouterr().out) == pytest.approx(brute_force_assignment(x, y, p), abs=1e-9)

    def test_config_run_writes_coupling(self, tmp_path):
        tiny_csv(tmp_path, "a.csv", [[0.0], [1.0]])
        tiny_csv(tmp_path, "b.csv", [[0.5], [3.0]])
        cfg = write(tmp_path, "solve.yaml", "kind: solve\np: 1\nmu: a.csv\nnu: b.csv\n")
        assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
        rows = read_rows(tmp_path / "out" / "rows.csv")
        assert sum(float(r["mass"]) for r in rows) == pytest.approx(1.0)
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["cost"] == pytest.approx(1.25)

    def test_dimension_mismatch_exit_code(self, tmp_path, capsys):
        a = tiny_csv(tmp_path, "a.csv", [[0.0], [1.0]])
        b = tiny_csv(tmp_path, "b.csv", [[0.0, 1.0]])
        assert main(["solve", str(a), str(b)]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_files(self, capsys):
        assert main(["solve"]) == 2


def test_wpp_direct(tmp_path, capsys):
    rng = np.random.default_rng(0)
    a = tiny_csv(tmp_path, "a.csv", rng.normal(size=(30, 3)))
    b = tiny_csv(tmp_path, "b.csv", rng.normal(size=(30, 3)) * [3, 1, 1])
    assert main(["wpp", str(a), str(b), "-p", "2", "--restarts", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert np.asarray(out["frame"]).shape == (1, 3) and out["value"] > 0


class TestValidation:
    def test_zero_replicates(self, tmp_path, capsys):
        cfg = write(tmp_path, "bad.yaml", RATES.replace("replicates: 3", "replicates: 0"))
        assert main(["rates", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert f"{cfg}:8:" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    def test_missing_field_same_error_in_describe(self, tmp_path, capsys):
        cfg = write(tmp_path, "bad.yaml", RATES.replace("n_list: [20, 40]\n", ""))
        assert main(["rates", "--config", str(cfg)]) == 2
        run_err = capsys.readouterr().err
        assert main(["describe", "--config", str(cfg)]) == 2
        assert capsys.readouterr().err == run_err
        assert "requires field 'n_list'" in run_err

    @pytest.mark.parametrize(
        "edit,line",
        [
            (("p: 1", "p: 0.5"), 3),
            (("n_list: [20, 40]", "n_list: [40, 20]"), 7),
            (("seed: 11", "seed: -1"), 2),
            (("dim: 2", "dim: 2\n  bogus: 1"), 4),
            (("replicates: 3", "replicates: 3\ncolour: red"), 9),
        ],
    )
    def test_line_referenced(self, edit, line):
        with pytest.raises(ConfigurationError, match=rf"^cfg.yaml:{line}: "):
            parse_config(RATES.replace(*edit), "cfg.yaml")

    def test_invalid_yaml(self):
        with pytest.raises(ConfigurationError, match=r"^x:2: invalid YAML"):
            parse_config("kind: solve\n\tmu: a.csv\n", "x")

    def test_subcommand_kind_mismatch(self, tmp_path, capsys):
        cfg = write(tmp_path, "rates.yaml", RATES)
        assert main(["spike", "--config", str(cfg)]) == 2
        assert "expects kind spike_recovery" in capsys.readouterr().err

    def test_concentration_replicate_floor(self):
        text = "kind: concentration\nsampler: {family: two_point, locations: [[0], [1]], probabilities: [0.5, 0.5]}\nn_list: [10]\nreplicates: 50\n"
        with pytest.raises(ConfigurationError, match="at least 200"):
            parse_config(text)

    def test_seed_override_bounds(self, tmp_path):
        cfg = write(tmp_path, "rates.yaml", RATES)
        with pytest.raises(SystemExit):
            main(["rates", "--config", str(cfg), "--seed", str(2**64)])

    def test_relative_paths_resolved(self, tmp_path):
        cfg = write(tmp_path, "s.yaml", "kind: solve\nmu: a.csv\nnu: sub/b.csv\n")
        loaded = load_config(cfg)
        assert loaded.mu == str(tmp_path / "a.csv") and loaded.nu == str(tmp_path / "sub" / "b.csv")


class TestDescribe:
    def test_plan_and_no_writes(self, tmp_path, capsys, monkeypatch):
        cfg = write(tmp_path, "rates.yaml", RATES)
        monkeypatch.chdir(tmp_path)
        before = sorted(p.name for p in tmp_path.rglob("*"))
        assert main(["describe", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "n_list: 20, 40" in out and "total replicates: 6" in out
        assert sorted(p.name for p in tmp_path.rglob("*")) == before


class TestRun:
    def test_outputs_and_traceability(self, tmp_path):
        cfg = write(tmp_path, "rates.yaml", RATES)
        assert main(["rates", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        rows = read_rows(tmp_path / "o" / "rows.csv")
        assert {(r["n"], r["replicate"]) for r in rows} == {(n, r) for n in ("20", "40") for r in ("0", "1", "2")}
        assert all(r["seed_key"] == f"11/{r['n']}/{r['replicate']}" for r in rows)
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["flagged_rows"] == 0 and summary["version"] == "0.1.0"
        assert load_config(tmp_path / "o" / "config.yaml").seed == 11

    def test_byte_identical_across_runs_and_threads(self, tmp_path):
        cfg = write(tmp_path, "spike.yaml", SPIKE)
        assert main(["spike", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert main(["spike", "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
        assert (tmp_path / "a" / "rows.csv").read_bytes() == (tmp_path / "b" / "rows.csv").read_bytes()

    def test_seed_override_changes_rows(self, tmp_path):
        cfg = write(tmp_path, "rates.yaml", RATES)
        main(["rates", "--config", str(cfg), "--out", str(tmp_path / "a")])
        main(["rates", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "12"])
        assert (tmp_path / "a" / "rows.csv").read_text() != (tmp_path / "b" / "rows.csv").read_text()

    def test_lock(self, tmp_path, capsys):
        out = tmp_path / "o"
        out.mkdir()
        (out / ".lock").write_text("1")
        cfg = write(tmp_path, "rates.yaml", RATES)
        assert main(["rates", "--config", str(cfg), "--out", str(out)]) == 1
        assert "locked" in capsys.readouterr().err
        assert not (out / "rows.csv").exists()

    def test_lock_released(self, tmp_path):
        cfg = ExperimentConfig(kind="hardness_suite", hardness={"m_list": [2], "orders": [1], "eps_list": [1 / 6]})
        experiments.run(cfg, tmp_path)
        assert not (tmp_path / ".lock").exists()
        with experiments._RunLock(tmp_path), pytest.raises(OutputLockedError):
            experiments.run(cfg, tmp_path)

    def test_failed_replicate_is_flagged(self, tmp_path, monkeypatch):
        real = experiments.plugin_distance
        calls = {"n": 0}

        def flaky(mu, nu, p):
            calls["n"] += 1
            if calls["n"] == 2:
                raise FloatingPointError("synthetic failure")
            return real(mu, nu, p)

        monkeypatch.setattr(experiments, "plugin_distance", flaky)
        report = experiments.run(parse_config(RATES), tmp_path)
        assert report.summary["flagged_rows"] == 1
        assert len(report.rows) == 6
        assert sum(1 for r in read_rows(tmp_path / "rows.csv") if r["flag"]) == 1

    def test_hardness_default_suite(self, tmp_path, capsys):
        assert main(["hardness", "--out", str(tmp_path / "h")]) == 0
        summary = json.loads((tmp_path / "h" / "summary.json").read_text())
        assert summary["kind"] == "hardness_suite"
        sections = {r["section"] for r in read_rows(tmp_path / "h" / "rows.csv")}
        assert sections == {"moment_deviation", "w1", "chi_square", "lp_objective", "prior_check"}
