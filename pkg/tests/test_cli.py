import csv
import json

import pytest

from rwre_lab.cli import (CONFIG_SCHEMA, DEFAULT_CONFIG, MODEL_CATALOG,
                          apply_override, build_model, config_digest,
                          load_config, main)
from rwre_lab.env import ConfigurationError

import jsonschema


def run(args):
    return main(args)


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# digest=")
    return list(csv.reader(lines[1:]))


class TestConfig:
    def test_overrides_dotted_paths(self):
        cfg = {"a": {"b": 1}}
        apply_override(cfg, "a.b", "2")
        apply_override(cfg, "a.c.d", "[1,2]")
        apply_override(cfg, "name", "hello")
        assert cfg == {"a": {"b": 2, "c": {"d": [1, 2]}}, "name": "hello"}

    def test_load_config_merges_and_validates(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"model": {"family": "homogeneous"},
                                 "master_seed": 5}))
        cfg = load_config(str(p), ["policy.margin=2"], threads=2)
        assert cfg["model"]["family"] == "homogeneous"
        assert cfg["policy"]["margin"] == 2
        assert cfg["master_seed"] == 5
        assert cfg["threads"] == 2

    def test_invalid_family_rejected(self):
        with pytest.raises(ConfigurationError):
            load_config(None, ["model.family=bogus"])

    def test_bad_override_format(self):
        with pytest.raises(ConfigurationError):
            load_config(None, ["justakey"])

    def test_digest_ignores_execution_details(self):
        a = load_config(None, [], threads=1, out="x")
        b = load_config(None, [], threads=8, out="y")
        assert config_digest(a) == config_digest(b)
        c = load_config(None, [], seed=99)
        assert config_digest(a) != config_digest(c)

    def test_catalog_round_trips_through_builder(self):
        for family, entry in MODEL_CATALOG.items():
            cfg = dict(DEFAULT_CONFIG)
            cfg["model"] = {"family": family, "dimension": 2,
                            "direction_axis": 0, "r0": 1.0,
                            "params": dict(entry["defaults"])}
            jsonschema.validate(cfg, CONFIG_SCHEMA)
            model = build_model(cfg["model"])
            assert model.dimension == 2


class TestCommands:
    def test_list_models(self, capsys):
        assert run(["list-models"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert set(out) == {"homogeneous", "dirichlet", "perturbed", "mixture"}

    def test_unknown_family_exits_2(self, tmp_path):
        code = run(["simulate", "--set", "model.family=unknown",
                    "--out", str(tmp_path / "o")])
        assert code == 2

    def test_simulate_writes_trajectory(self, tmp_path):
        out = tmp_path / "o"
        assert run(["simulate", "--seed", "3", "--out", str(out),
                    "--set", "experiment.horizon=50"]) == 0
        rows = read_csv(out / "trajectory.csv")
        assert rows[0] == ["t", "x_1", "x_2"]
        assert len(rows) == 52
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert "trajectory.csv" in manifest["checksums"]

    def test_regen_csv_schema(self, tmp_path):
        out = tmp_path / "o"
        assert run(["regen", "--seed", "3", "--out", str(out),
                    "--set", "experiment.horizon=500"]) == 0
        rows = read_csv(out / "regen.csv")
        assert rows[0] == ["k", "time", "level", "x_1", "x_2", "status"]
        statuses = {r[5] for r in rows[1:]}
        assert statuses <= {"confirmed", "censored"}

    def test_jointregen_csv_schema(self, tmp_path):
        out = tmp_path / "o"
        assert run(["jointregen", "--seed", "3", "--out", str(out),
                    "--set", "experiment.horizon=800"]) == 0
        rows = read_csv(out / "jointregen.csv")
        assert rows[0] == ["k", "mu1", "mu2", "level", "dx_1", "dx_2"]
        levels = [int(r[3]) for r in rows[1:]]
        assert levels == sorted(levels)

    def test_variance_decay_and_verify(self, tmp_path):
        out = tmp_path / "o"
        args = ["variance-decay", "--seed", "5", "--out", str(out),
                "--set", "experiment.n_grid=[64,128,256]",
                "--set", "experiment.K=6", "--set", "experiment.M=6"]
        assert run(args) == 0
        rows = read_csv(out / "variance.csv")
        assert rows[0] == ["n", "K", "M", "raw_var", "mean_inner_var",
                           "corrected_var", "stderr"]
        fit = json.loads((out / "fit.json").read_text())
        assert set(fit) >= {"exponent", "ci", "r_squared", "grid", "ok"}
        assert run(["verify", "--out", str(out)]) == 0

    def test_verify_detects_tampering(self, tmp_path, capsys):
        out = tmp_path / "o"
        run(["simulate", "--seed", "1", "--out", str(out),
             "--set", "experiment.horizon=20"])
        (out / "trajectory.csv").write_text("tampered")
        assert run(["verify", "--out", str(out)]) == 3
        report = json.loads(capsys.readouterr().out.splitlines()[-1])
        assert not report["verified"]

    def test_byte_determinism_across_threads(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        base = ["variance-decay", "--seed", "7",
                "--set", "experiment.n_grid=[64,128]",
                "--set", "experiment.K=4", "--set", "experiment.M=4"]
        assert run(base + ["--out", str(a), "--threads", "1"]) == 0
        assert run(base + ["--out", str(b), "--threads", "2"]) == 0
        assert (a / "variance.csv").read_bytes() == (b / "variance.csv").read_bytes()
        assert (a / "fit.json").read_bytes() == (b / "fit.json").read_bytes()
        ma = json.loads((a / "manifest.json").read_text())["checksums"]
        mb = json.loads((b / "manifest.json").read_text())["checksums"]
        assert ma == mb

    def test_insufficient_data_exits_3_with_manifest(self, tmp_path):
        out = tmp_path / "o"
        code = run(["first-slab", "--seed", "1", "--out", str(out),
                    "--set", "experiment.levels=[50]",
                    "--set", "experiment.replicas=20",
                    "--set", "experiment.horizon=30"])
        assert code == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "partial"
        assert (out / "first_slab.csv").exists()

    def test_surgery_check_rows(self, tmp_path):
        out = tmp_path / "o"
        assert run(["surgery-check", "--seed", "2", "--out", str(out),
                    "--set", "experiment.samples=25",
                    "--set", "experiment.n=32"]) == 0
        rows = read_csv(out / "surgery.csv")
        assert rows[0][:2] == ["env_seed", "walk_seed"]
        assert rows[0][-4:] == ["lhs", "rhs", "holds", "censored"]
        assert len(rows) == 26
