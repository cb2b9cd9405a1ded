import json
import os

import numpy as np
import pytest

from lpvccd import cli


@pytest.fixture(scope="module")
def trim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("models")
    rc = cli.main(["trim", "--wind-range", "3:25:23", "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def lpv_dir(tmp_path_factory, trim_dir):
    out = tmp_path_factory.mktemp("lpv")
    rc = cli.main(["lpv-build", "--models", str(trim_dir), "--out", str(out)])
    assert rc == 0
    return out


class TestTrim:
    def test_writes_23_models_and_table(self, trim_dir):
        models = [f for f in os.listdir(trim_dir) if f.startswith("model_")]
        assert len(models) == 23
        table = (trim_dir / "trim_table.csv").read_text().splitlines()
        assert len(table) == 24
        assert table[0].startswith("w,xi_theta_p_dot")

    def test_deterministic(self, tmp_path, trim_dir):
        out = tmp_path / "again"
        rc = cli.main(["trim", "--wind-range", "3:25:23", "--out", str(out)])
        assert rc == 0
        a = (trim_dir / "trim_table.csv").read_bytes()
        b = (out / "trim_table.csv").read_bytes()
        assert a == b

    def test_out_of_bounds_plant(self, tmp_path):
        rc = cli.main(["trim", "--plant", "20,12", "--out", str(tmp_path / "x")])
        assert rc == 2


class TestLpvBuild:
    def test_manifest_written(self, lpv_dir):
        manifest = json.loads((lpv_dir / "manifest.json").read_text())
        assert manifest["type"] == "wind_lpv"
        assert len(manifest["W"]) == 23

    def test_too_few_models(self, tmp_path, trim_dir):
        few = tmp_path / "few"
        few.mkdir()
        names = sorted(f for f in os.listdir(trim_dir) if f.startswith("model_"))[:3]
        for name in names:
            (few / name).write_bytes((trim_dir / name).read_bytes())
        rc = cli.main(["lpv-build", "--models", str(few), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_missing_dir_is_io_error(self, tmp_path):
        rc = cli.main(["lpv-build", "--models", str(tmp_path / "nope"),
                       "--out", str(tmp_path / "o")])
        assert rc == 4


class TestLpvValidate:
    def test_split_none_passes_with_zero_errors(self, trim_dir, tmp_path):
        out = tmp_path / "val0"
        rc = cli.main(["lpv-validate", "--models", str(trim_dir), "--split", "none",
                       "--scenario-tf", "60", "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert max(report["hinf_errors"]) <= 1e-10

    def test_alternate_split_peaks_in_transition(self, trim_dir, tmp_path):
        out = tmp_path / "val1"
        rc = cli.main(["lpv-validate", "--models", str(trim_dir), "--split", "alternate",
                       "--scenario-tf", "120", "--out", str(out)])
        report = json.loads((out / "report.json").read_text())
        errors = np.array(report["hinf_errors"])
        w = np.array(report["heldout_w"])
        assert 8.0 <= w[int(np.argmax(errors))] <= 12.0
        assert report["transition_region_dominates"]
        rows = (out / "errors.csv").read_text().splitlines()
        assert len(rows) == 1 + len(w)
        # exit code mirrors the report's pass flag
        assert rc == (0 if report["passed"] else 2)

    def test_missing_models_io_error(self, tmp_path):
        rc = cli.main(["lpv-validate", "--models", str(tmp_path / "void"),
                       "--out", str(tmp_path / "o")])
        assert rc == 4


class TestOcSolve:
    def test_smoke_solve(self, lpv_dir, tmp_path):
        import time
        out = tmp_path / "oc"
        t0 = time.time()
        rc = cli.main(["oc-solve", "--lpv", str(lpv_dir), "--case", "7",
                       "--theta-max", "4", "--N", "240", "--t-f", "120",
                       "--out", str(out)])
        elapsed = time.time() - t0
        assert rc == 0
        assert elapsed < 5.0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "optimal"
        assert summary["avg_power_w"] > 1e6
        lines = (out / "solution.csv").read_text().splitlines()
        assert len(lines) == 1 + 240

    def test_infeasible_exit_code(self, tmp_path):
        corner = tmp_path / "corner"
        assert cli.main(["trim", "--plant", "36,6", "--wind-range", "8:12:5",
                         "--out", str(corner)]) == 0
        lpv_out = tmp_path / "corner_lpv"
        assert cli.main(["lpv-build", "--models", str(corner),
                         "--out", str(lpv_out)]) == 0
        rc = cli.main(["oc-solve", "--lpv", str(lpv_out), "--case", "5",
                       "--means", "8,9,10,10.5,11,12", "--theta-max", "3",
                       "--N", "160", "--t-f", "120", "--out", str(tmp_path / "oc")])
        assert rc == 3

    def test_wind_csv_input(self, lpv_dir, tmp_path):
        wind_csv = tmp_path / "wind.csv"
        t = np.arange(0.0, 121.0, 1.0)
        w = np.full_like(t, 12.0)
        with open(wind_csv, "w") as fh:
            fh.write("t,w\n")
            for ti, wi in zip(t, w):
                fh.write(f"{ti},{wi}\n")
        rc = cli.main(["oc-solve", "--lpv", str(lpv_dir), "--wind", str(wind_csv),
                       "--N", "120", "--t-f", "120", "--out", str(tmp_path / "oc2")])
        assert rc == 0


@pytest.fixture(scope="module")
def sweep_setup(tmp_path_factory):
    """A tiny family on disk plus a matching sweep config."""
    from lpvccd import lpv as lpvmod
    base = tmp_path_factory.mktemp("sweepenv")
    fam_dir = base / "family"
    family = lpvmod.build_family_from_surrogate(
        cs_axis=np.array([40.0, 55.0, 70.0]),
        cd_axis=np.array([9.0, 14.0, 20.0]),
        W=np.array([4.0, 7.0, 10.0, 13.0, 17.0, 22.0]))
    lpvmod.save_family(fam_dir, family)
    config = {
        "grid": {"cs": [45.0, 65.0, 2], "cd": [10.0, 18.0, 2]},
        "levels_deg": [6.0],
        "case_means": [10.0, 14.0],
        "seed": 11,
        "n_mesh": 120,
        "t_f": 120.0,
        "family": str(fam_dir),
        "workers": 2,
        "f_corners": [[0.8, 0.8], [1.2, 1.2]],
    }
    cfg_path = base / "config.json"
    cfg_path.write_text(json.dumps(config))
    return base, cfg_path, config


class TestSweep:
    def test_smoke_sweep_counts(self, sweep_setup, tmp_path):
        base, cfg_path, _ = sweep_setup
        out = tmp_path / "out"
        rc = cli.main(["sweep", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        cases_rows = (out / "cases.csv").read_text().splitlines()
        assert len(cases_rows) == 1 + 2 * 2 * 1 * 2  # 8 subproblem solves
        summary = json.loads((out / "summary.json").read_text())
        assert len(summary["cost_corners"]) == 2
        assert summary["per_level"][0]["lcoe_opt"] > 0

    def test_unknown_config_key_rejected(self, sweep_setup, tmp_path):
        base, _, config = sweep_setup
        bad = dict(config)
        bad["mesh_pts"] = 100
        bad_path = tmp_path / "bad.json"
        bad_path.write_text(json.dumps(bad))
        rc = cli.main(["sweep", "--config", str(bad_path), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_cached_rerun_identical(self, sweep_setup, tmp_path):
        base, cfg_path, config = sweep_setup
        cached = dict(config)
        cached["cache_dir"] = str(tmp_path / "cache")
        cfg2 = tmp_path / "cfg2.json"
        cfg2.write_text(json.dumps(cached))
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert cli.main(["sweep", "--config", str(cfg2), "--out", str(out1)]) == 0
        assert cli.main(["sweep", "--config", str(cfg2), "--out", str(out2)]) == 0
        assert (out1 / "sweep.csv").read_bytes() == (out2 / "sweep.csv").read_bytes()
        assert (out1 / "cases.csv").read_bytes() == (out2 / "cases.csv").read_bytes()
        s2 = json.loads((out2 / "summary.json").read_text())
        assert s2["cache_hits"] == 8

    def test_report(self, sweep_setup, tmp_path, capsys):
        base, cfg_path, _ = sweep_setup
        out = tmp_path / "rep"
        assert cli.main(["sweep", "--config", str(cfg_path), "--out", str(out)]) == 0
        capsys.readouterr()
        rc = cli.main(["report", "--sweep", str(out)])
        assert rc == 0
        text = capsys.readouterr().out
        assert "theta_max 6 deg" in text and "F=[0.8, 0.8]" in text
        rc = cli.main(["report", "--sweep", str(out), "--format", "csv"])
        assert rc == 0
        assert "theta_max_deg,argmin_cs" in capsys.readouterr().out

    def test_report_missing_dir(self, tmp_path):
        assert cli.main(["report", "--sweep", str(tmp_path / "none")]) == 4
