"""End-to-end checks of the command-line interface.

Each test drives main() with argv lists and inspects the CSV and manifest
artifacts it leaves in a tmp directory: exit codes, column layout, float
round-trips, determinism, and the verify suite's fault response.
"""

import json
import math
import os

import numpy as np
import pytest

from quantracer.cli import (
    PRESETS,
    ScenarioConfig,
    load_config_file,
    main,
    resolve_config,
    validate_config,
)


def run_cli(tmp_path, *argv):
    """Run main() with cwd switched to tmp_path; return the exit code."""
    old = os.getcwd()
    os.chdir(tmp_path)
    try:
        return main(list(argv))
    finally:
        os.chdir(old)


def read_csv(path):
    """Parse our CSV dialect: comment line, header, then value rows."""
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# units:")
    header = lines[1].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[2:]]
    return header, rows


def read_manifest(path):
    return json.loads(path.with_name(path.name + ".manifest.json")
                      .read_text(encoding="utf-8"))


def checks_by_name(manifest):
    return {c["name"]: c for c in manifest["checks"]}


class TestConfigResolution:
    def test_preset_below_config_file_below_flags(self, tmp_path):
        conf = tmp_path / "scenario.conf"
        conf.write_text("t_max = 6\nloss_rate = 0.2\n# comment\n\n",
                        encoding="utf-8")
        parser_args = ["dissipative", "--preset", "fig1",
                       "--config", str(conf), "--lambda", "0.05"]
        import quantracer.cli as cli
        args = cli.build_parser().parse_args(parser_args)
        cfg = resolve_config(args)
        assert cfg.t_max == 6.0            # file overrides preset's 20
        assert cfg.loss_rate == 0.05       # flag overrides file's 0.2
        assert cfg.p_list == PRESETS["fig1"]["p_list"]

    def test_unknown_config_key_exits_2(self, tmp_path):
        conf = tmp_path / "bad.conf"
        conf.write_text("barrier_heigth = 4\n", encoding="utf-8")
        assert run_cli(tmp_path, "free", "--config", str(conf)) == 2

    def test_malformed_config_line_exits_2(self, tmp_path):
        conf = tmp_path / "bad.conf"
        conf.write_text("just some words\n", encoding="utf-8")
        assert run_cli(tmp_path, "free", "--config", str(conf)) == 2

    def test_empty_p_list_exits_2(self, tmp_path):
        assert run_cli(tmp_path, "free", "--p-list", "", "--t-max", "2") == 2

    def test_p_out_of_range_exits_2(self, tmp_path):
        assert run_cli(tmp_path, "free", "--p-list", "0.5,1.5") == 2

    def test_unsorted_p_list_exits_2(self, tmp_path):
        assert run_cli(tmp_path, "free", "--p-list", "0.5,0.3") == 2

    def test_nonpositive_step_exits_2(self, tmp_path):
        assert run_cli(tmp_path, "free", "--t-step", "0") == 2

    def test_small_n_lambda_rejected(self):
        with pytest.raises(Exception):
            validate_config(ScenarioConfig(n_lambda=8))

    def test_config_file_types_coerced(self, tmp_path):
        conf = tmp_path / "types.conf"
        conf.write_text(
            "p_list = 0.2, 0.4\nk_nodes = 128\nquick = true\nout = xy.csv\n",
            encoding="utf-8")
        values = load_config_file(str(conf))
        assert values == {"p_list": (0.2, 0.4), "k_nodes": 128,
                          "quick": True, "out": "xy.csv"}


class TestFreeCommand:
    def test_median_rides_the_center(self, tmp_path):
        code = run_cli(tmp_path, "free", "--p-list", "0.5",
                       "--t-max", "5", "--t-step", "1")
        assert code == 0
        header, rows = read_csv(tmp_path / "free_trajectories.csv")
        assert header == ["P", "t", "x_cdf", "v_cdf", "x_ode", "v_ode",
                          "discrepancy", "status"]
        assert len(rows) == 6
        for row in rows:
            t = float(row["t"])
            assert float(row["x_cdf"]) == pytest.approx(-10.0 + 2.0 * t,
                                                        abs=1e-9)
            assert float(row["v_cdf"]) == pytest.approx(2.0, abs=1e-9)
            assert row["status"] == "ok"

    def test_csv_bytes_are_stable_across_reruns(self, tmp_path):
        argv = ("free", "--p-list", "0.3,0.7", "--t-max", "3")
        assert run_cli(tmp_path, *argv) == 0
        first = (tmp_path / "free_trajectories.csv").read_bytes()
        assert run_cli(tmp_path, *argv) == 0
        second = (tmp_path / "free_trajectories.csv").read_bytes()
        assert first == second

    def test_csv_uses_lf_endings_and_17_digits(self, tmp_path):
        assert run_cli(tmp_path, "free", "--p-list", "0.5",
                       "--t-max", "2") == 0
        raw = (tmp_path / "free_trajectories.csv").read_bytes()
        assert b"\r" not in raw
        _, rows = read_csv(tmp_path / "free_trajectories.csv")
        # Shortest-repr at 17 significant digits round-trips exactly.
        x = float(rows[1]["x_cdf"])
        assert format(x, ".17g") == rows[1]["x_cdf"]

    def test_manifest_written_next_to_csv(self, tmp_path):
        assert run_cli(tmp_path, "free", "--p-list", "0.5",
                       "--t-max", "2", "--out", "mine.csv") == 0
        manifest = read_manifest(tmp_path / "mine.csv")
        assert manifest["command"] == "free"
        assert manifest["config"]["p_list"] == [0.5]
        assert "wall_clock_s" in manifest
        assert checks_by_name(manifest)["method_equivalence"]["passed"]


class TestDissipativeCommand:
    def test_termination_row_has_exact_time(self, tmp_path):
        assert run_cli(tmp_path, "dissipative", "--p-list", "0.5",
                       "--t-max", "10", "--lambda", "0.1") == 0
        _, rows = read_csv(tmp_path / "dissipative_trajectories.csv")
        final = rows[-1]
        assert final["status"] == "norm_below_p"
        assert float(final["t"]) == pytest.approx(-math.log(0.5) / 0.1,
                                                  abs=1e-6)
        assert final["x_cdf"] == ""
        manifest = read_manifest(tmp_path / "dissipative_trajectories.csv")
        assert checks_by_name(manifest)["termination_time"]["passed"]

    def test_discrepancy_column_small(self, tmp_path):
        assert run_cli(tmp_path, "dissipative", "--p-list", "0.3",
                       "--t-max", "8", "--lambda", "0.1") == 0
        _, rows = read_csv(tmp_path / "dissipative_trajectories.csv")
        gaps = [float(r["discrepancy"]) for r in rows if r["discrepancy"]]
        assert gaps and max(gaps) <= 1e-5


class TestTunnelCommand:
    def test_zero_barrier_lag_vanishes(self, tmp_path):
        assert run_cli(tmp_path, "tunnel", "--p-list", "0.3,0.5",
                       "--t-max", "4", "--barrier-height", "0") == 0
        _, rows = read_csv(tmp_path / "tunnel_trajectories.csv")
        assert {float(r["P"]) for r in rows} == {0.3, 0.5}
        worst = max(abs(float(r["lag"])) for r in rows)
        assert worst <= 1e-6

    def test_snapshot_blocks_normalized(self, tmp_path):
        assert run_cli(tmp_path, "tunnel", "--p-list", "0.5", "--t-max", "4",
                       "--snapshot-times", "0,2") == 0
        dens = tmp_path / "tunnel_trajectories_density.csv"
        header, rows = read_csv(dens)
        assert header == ["t", "x", "rho"]
        manifest = read_manifest(dens)
        names = checks_by_name(manifest)
        assert names["snapshot_mass_t0"]["passed"]
        assert names["snapshot_mass_t2"]["passed"]
        # Trapezoid over the emitted block should also come out near 1.
        block = [(float(r["x"]), float(r["rho"])) for r in rows
                 if float(r["t"]) == 0.0]
        xs, ys = zip(*block)
        assert np.trapezoid(ys, xs) == pytest.approx(1.0, abs=1e-4)

    def test_coarse_k_grid_exits_3(self, tmp_path):
        assert run_cli(tmp_path, "tunnel", "--p-list", "0.5",
                       "--t-max", "8", "--k-nodes", "64") == 3


class TestDeltaPCommand:
    def test_small_grid_via_config(self, tmp_path):
        conf = tmp_path / "dp.conf"
        conf.write_text("delta_x = 0.5 1.0\ndelta_t = 3 6\nt_max = 6\n",
                        encoding="utf-8")
        assert run_cli(tmp_path, "delta-p", "--preset", "fig2",
                       "--config", str(conf)) == 0
        header, rows = read_csv(tmp_path / "delta_p_report.csv")
        assert header == ["x", "t", "dp_direct", "term1", "term2", "term3",
                          "dp_total", "agreement_rel", "positivity_ok"]
        assert len(rows) == 4
        for row in rows:
            direct = float(row["dp_direct"])
            total = float(row["dp_total"])
            parts = sum(float(row[k]) for k in ("term1", "term2", "term3"))
            assert parts == pytest.approx(total, rel=1e-12, abs=1e-15)
            assert abs(direct - total) <= max(1e-2 * abs(direct), 1e-6)
            assert row["positivity_ok"] == "true"
        manifest = read_manifest(tmp_path / "delta_p_report.csv")
        names = checks_by_name(manifest)
        assert names["positivity"]["passed"]
        assert names["route_agreement"]["passed"]

    def test_x_inside_barrier_exits_2(self, tmp_path):
        conf = tmp_path / "dp.conf"
        conf.write_text("delta_x = 0.1\ndelta_t = 3\n", encoding="utf-8")
        assert run_cli(tmp_path, "delta-p", "--preset", "fig2",
                       "--config", str(conf)) == 2


class TestSphere3DCommand:
    def test_rows_and_conservation(self, tmp_path):
        assert run_cli(tmp_path, "sphere3d", "--preset", "fig3") == 0
        header, rows = read_csv(tmp_path / "sphere3d_flowmap.csv")
        assert header == ["seed_id", "t", "x", "y", "z", "enclosed_p"]
        assert len(rows) == 26 * 11
        enclosed = {float(r["enclosed_p"]) for r in rows}
        assert max(enclosed) - min(enclosed) <= 1e-4
        manifest = read_manifest(tmp_path / "sphere3d_flowmap.csv")
        assert checks_by_name(manifest)["conservation_3d"]["passed"]

    def test_zero_velocity_keeps_sphere_centered(self, tmp_path):
        conf = tmp_path / "s.conf"
        conf.write_text("velocity = 0 0 0\nt_max = 4\nt_step = 2\n"
                        "radius = 2.5\n", encoding="utf-8")
        assert run_cli(tmp_path, "sphere3d", "--config", str(conf)) == 0
        _, rows = read_csv(tmp_path / "sphere3d_flowmap.csv")
        by_time = {}
        for r in rows:
            xyz = np.array([float(r["x"]), float(r["y"]), float(r["z"])])
            by_time.setdefault(float(r["t"]), []).append(np.linalg.norm(xyz))
        for t, radii in by_time.items():
            assert max(radii) - min(radii) <= 1e-5


class TestVerifyCommand:
    def test_quick_passes_fast(self, tmp_path):
        import time
        start = time.perf_counter()
        assert run_cli(tmp_path, "verify", "--quick") == 0
        assert time.perf_counter() - start < 60.0
        header, rows = read_csv(tmp_path / "verify_report.csv")
        assert header == ["check", "passed", "detail"]
        assert {r["check"] for r in rows} >= {
            "method_equivalence", "unitarity", "continuity", "retardation",
            "delta_p_agreement", "conservation_3d", "trajectory_roundtrip"}
        assert all(r["passed"] == "true" for r in rows)

    def test_injected_fault_fails_continuity(self, tmp_path):
        assert run_cli(tmp_path, "verify", "--quick",
                       "--inject-fault", "flip-current") == 1
        _, rows = read_csv(tmp_path / "verify_report.csv")
        verdicts = {r["check"]: r["passed"] for r in rows}
        assert verdicts["continuity"] == "false"
        failed = {k for k, v in verdicts.items() if v == "false"}
        assert failed == {"continuity"}
