import json
import os
import subprocess
import sys

import pytest

CLI = [sys.executable, "-m", "episde.cli"]


def run_cli(args, env_extra=None, cwd=None):
    env = dict(os.environ)
    env.pop("EPISDE_SEED", None)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        CLI + args, capture_output=True, text=True, env=env, cwd=cwd, timeout=300
    )


class TestHelpAndErrors:
    @pytest.mark.parametrize(
        "sub", ["simulate", "figures", "compare", "stability", "chance"]
    )
    def test_help_exits_zero(self, sub):
        res = run_cli([sub, "--help"])
        assert res.returncode == 0
        assert "--seed" in res.stdout

    def test_missing_subcommand_fails(self):
        res = run_cli([])
        assert res.returncode != 0

    def test_nonpositive_steps_is_config_error(self):
        res = run_cli(["simulate", "--steps", "0", "--paths", "10"])
        assert res.returncode == 2
        assert "config error" in res.stderr

    def test_bad_box_is_config_error(self):
        res = run_cli(["chance", "--box", "2", "-2", "--paths", "10"])
        assert res.returncode == 2

    def test_unknown_benchmark_is_config_error(self):
        res = run_cli(["simulate", "--benchmark", "no-such-benchmark", "--paths", "10"])
        assert res.returncode == 2

    def test_unreadable_output_path_is_io_error(self, tmp_path):
        res = run_cli(
            [
                "simulate", "--paths", "5", "--steps", "10", "--T", "1",
                "--paths-csv", str(tmp_path / "no" / "such" / "dir" / "out.csv"),
            ]
        )
        assert res.returncode == 4
        assert "io error" in res.stderr


class TestSimulate:
    def test_reruns_byte_identical(self, tmp_path):
        args = [
            "simulate", "--paths", "50", "--steps", "40", "--T", "2",
            "--seed", "123", "--semantics", "both",
        ]
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run_cli(args + ["--paths-csv", str(out_a)]).returncode == 0
        assert run_cli(args + ["--paths-csv", str(out_b)]).returncode == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_worker_count_does_not_change_output(self, tmp_path):
        base = [
            "simulate", "--paths", "60", "--steps", "30", "--T", "1",
            "--seed", "5", "--semantics", "sde",
        ]
        out_a, out_b = tmp_path / "w1.csv", tmp_path / "w4.csv"
        run_cli(base + ["--workers", "1", "--paths-csv", str(out_a)])
        run_cli(base + ["--workers", "4", "--paths-csv", str(out_b)])
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_paths_csv_schema(self, tmp_path):
        out = tmp_path / "paths.csv"
        res = run_cli(
            [
                "simulate", "--paths", "3", "--steps", "4", "--T", "1",
                "--semantics", "both", "--paths-csv", str(out),
            ]
        )
        assert res.returncode == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "semantics,path_id,t,dim,x"
        # both semantics, 3 paths, 5 time points, 1 dim
        assert len(lines) == 1 + 2 * 3 * 5
        sems = {line.split(",")[0] for line in lines[1:]}
        assert sems == {"parametric", "sde"}

    def test_seed_env_var_fallback(self, tmp_path):
        out_env = tmp_path / "env.csv"
        out_flag = tmp_path / "flag.csv"
        args = ["simulate", "--paths", "20", "--steps", "10", "--T", "1"]
        run_cli(args + ["--paths-csv", str(out_env)], env_extra={"EPISDE_SEED": "77"})
        run_cli(args + ["--paths-csv", str(out_flag), "--seed", "77"])
        assert out_env.read_bytes() == out_flag.read_bytes()
        out_other = tmp_path / "other.csv"
        run_cli(args + ["--paths-csv", str(out_other), "--seed", "78"])
        assert out_env.read_bytes() != out_other.read_bytes()

    def test_binary_ensemble_output(self, tmp_path):
        out = tmp_path / "ens.bin"
        res = run_cli(
            [
                "simulate", "--paths", "4", "--steps", "8", "--T", "1",
                "--semantics", "parametric", "--ensemble-bin", str(out),
            ]
        )
        assert res.returncode == 0
        assert out.read_bytes()[:8] == b"EPISDE\x01\x00"

    def test_divergence_exit_code(self, tmp_path):
        # unstabilized linear growth with huge prior mean overflows the
        # double range within the horizon
        res = run_cli(
            [
                "simulate", "--benchmark", "linear-feedback", "--gain", "0",
                "--theta-bar", "500", "--paths", "4", "--steps", "200",
                "--T", "3", "--fail-on-divergence",
            ]
        )
        assert res.returncode == 3
        assert "divergence" in res.stderr


class TestFigures:
    def test_bands_csv_matches_analytic_oracle(self, tmp_path):
        bands = tmp_path / "bands.csv"
        res = run_cli(
            [
                "figures", "--benchmark", "scalar-drift", "--paths", "4000",
                "--steps", "100", "--T", "2", "--seed", "1",
                "--bands-csv", str(bands),
            ]
        )
        assert res.returncode == 0
        rows = [line.split(",") for line in bands.read_text().splitlines()[1:]]
        at_end = {
            (r[1], r[2]): (float(r[3]), float(r[4])) for r in rows if float(r[0]) == 2.0
        }
        # analytic 95% band at t=2: parametric +-2z, sde +-z*sqrt(2)
        assert at_end[("parametric", "analytic")][1] == pytest.approx(3.9199, abs=1e-3)
        assert at_end[("sde", "analytic")][1] == pytest.approx(2.7718, abs=1e-3)
        # empirical quantile bands agree with the oracle at N=4000
        assert at_end[("parametric", "empirical")][1] == pytest.approx(3.92, abs=0.25)
        assert at_end[("sde", "empirical")][1] == pytest.approx(2.77, abs=0.25)

    def test_highlight_paths_limits_emission(self, tmp_path):
        out = tmp_path / "paths.csv"
        res = run_cli(
            [
                "figures", "--paths", "100", "--steps", "4", "--T", "1",
                "--semantics", "parametric", "--highlight-paths", "3",
                "--paths-csv", str(out),
            ]
        )
        assert res.returncode == 0
        assert len(out.read_text().splitlines()) == 1 + 3 * 5


class TestCompare:
    def test_scalar_drift_discriminators(self, tmp_path):
        report = tmp_path / "report.json"
        res = run_cli(
            [
                "compare", "--benchmark", "scalar-drift", "--paths", "5000",
                "--steps", "150", "--T", "3", "--seed", "2",
                "--report-json", str(report),
            ]
        )
        assert res.returncode == 0
        body = json.loads(report.read_text())["results"]
        assert body["parametric"]["scaling_exponent"] == pytest.approx(2.0, abs=0.1)
        assert body["sde"]["scaling_exponent"] == pytest.approx(1.0, abs=0.1)
        assert body["parametric"]["increment_correlation"] == pytest.approx(1.0, abs=1e-6)
        assert abs(body["sde"]["increment_correlation"]) < 0.05
        assert body["sde"]["quadratic_variation_mean"] == pytest.approx(3.0, abs=0.2)
        assert body["parametric"]["quadratic_variation_mean"] < 0.2
        assert body["parametric"]["ks_vs_own_law"]["passed"]
        assert not body["parametric"]["ks_vs_swapped_law"]["passed"]
        assert body["sde"]["ks_vs_own_law"]["passed"]
        assert not body["sde"]["ks_vs_swapped_law"]["passed"]

    def test_discrete_benchmark_report(self, tmp_path):
        report = tmp_path / "report.json"
        res = run_cli(
            [
                "compare", "--benchmark", "dt-multiplicative", "--theta-bar", "1",
                "--paths", "5000", "--steps", "5", "--seed", "3",
                "--report-json", str(report),
            ]
        )
        assert res.returncode == 0
        body = json.loads(report.read_text())["results"]
        by_step = {row["step"]: row for row in body["parametric"]}
        assert by_step[3]["oracle_variance"] == pytest.approx(
            by_step[3]["ensemble_variance"], rel=0.35
        )
        add_by_step = {row["step"]: row for row in body["sde"]}
        assert add_by_step[3]["oracle_variance"] == 3.0


class TestConfigFile:
    def test_config_file_merge_and_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"paths": 30, "steps": 20, "T": 1.0, "seed": 9}))
        out_a = tmp_path / "a.csv"
        out_b = tmp_path / "b.csv"
        run_cli(["simulate", "--config", str(cfg), "--paths-csv", str(out_a)])
        # flag overrides the file value
        run_cli(
            ["simulate", "--config", str(cfg), "--seed", "10", "--paths-csv", str(out_b)]
        )
        assert out_a.exists() and out_b.exists()
        assert out_a.read_bytes() != out_b.read_bytes()
        flat = tmp_path / "flat.csv"
        run_cli(
            [
                "simulate", "--paths", "30", "--steps", "20", "--T", "1",
                "--seed", "9", "--paths-csv", str(flat),
            ]
        )
        assert out_a.read_bytes() == flat.read_bytes()

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"pathz": 30}))
        res = run_cli(["simulate", "--config", str(cfg)])
        assert res.returncode == 2
        assert "unknown keys" in res.stderr

    def test_missing_config_file_rejected(self, tmp_path):
        res = run_cli(["simulate", "--config", str(tmp_path / "nope.json")])
        assert res.returncode == 2


class TestVerdictCommands:
    def test_stability_table(self):
        res = run_cli(
            [
                "stability", "--benchmark", "linear-feedback", "--paths", "4000",
                "--steps", "100", "--T", "10", "--box", "-100", "100", "--seed", "4",
            ]
        )
        assert res.returncode == 0
        assert "parametric" in res.stdout and "sde" in res.stdout

    def test_chance_report_json(self, tmp_path):
        report = tmp_path / "chance.json"
        res = run_cli(
            [
                "chance", "--benchmark", "scalar-drift", "--paths", "20000",
                "--steps", "100", "--T", "1", "--box", "-2", "2",
                "--delta", "0.07", "--seed", "6", "--report-json", str(report),
            ]
        )
        assert res.returncode == 0
        doc = json.loads(report.read_text())["report"]
        verdicts = {row["semantics"]: row["verdict"] for row in doc["chance"]}
        assert verdicts["parametric"] == "satisfied"
        assert verdicts["sde"] == "violated"
