"""Config validation and CLI surface: subcommands, files, exit codes."""

import json
import os

import numpy as np
import pytest

from afc import cli
from afc.config import config_from_dict, load_config
from afc.errors import ValidationError

REPO_CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "reference_servo.toml")

GOLDEN_TRACE_HEADER = (
    "k,e,u,u_A,eps0,theta_M_norm,"
    "theta_A_1,theta_A_2,theta_A_3,theta_B_1,theta_B_2,theta_B_3,"
    "theta_M_1,theta_M_2,theta_M_3,theta_M_4,"
    "proj_A_fired,proj_B_fired"
)

GOLDEN_SUMMARY_KEYS = [
    "steps", "seed", "freeze_at", "harmonics_hz",
    "before_amplitudes", "after_amplitudes", "attenuation_db",
    "theta_A_rel_error", "theta_B_rel_error", "theta_plant_rel_error",
    "theta_M_residue_ratio", "theta_M_true_residue_ratio", "residue_target",
    "assumption_H_ok", "proj_A_count", "proj_B_count",
    "theta_A_final", "theta_B_final", "theta_M_final", "theta_D_final",
    "plant_a", "plant_b", "plant_order", "spectrum_window", "settle",
    "runtime_s",
]


def small_tree():
    return {
        "plant": {"mode": "random", "order": 3, "seed": 8, "noise_sigma": 0.0},
        "disturbance": {
            "sample_rate_hz": 41760.0,
            "harmonics": [[120.0, 1.0, 0.4], [240.0, 0.8, -1.0]],
        },
        "excitation": {"mode": "prbs", "amplitude": 1.0, "prbs_seed": 4},
        "adaptation": {"n_a": 3},
        "synthesis": {"alpha": 4e-5, "beta": 1.0 - 2e-7},
        "run": {"steps": 800, "seed": 3, "decimate": 1, "settle": 348,
                "spectrum_window": 348},
    }


def write_toml(tree, path):
    """Minimal TOML writer for the flat config trees used in tests."""

    def fmt(v):
        if isinstance(v, bool):
            return str(v).lower()
        if isinstance(v, (int, float)):
            return repr(v)
        if isinstance(v, str):
            return f'"{v}"'
        if isinstance(v, dict):
            inner = ", ".join(f"{k} = {fmt(x)}" for k, x in v.items())
            return "{ " + inner + " }"
        return "[" + ", ".join(fmt(x) for x in v) + "]"

    with open(path, "w") as fh:
        for section, body in tree.items():
            fh.write(f"[{section}]\n")
            for key, value in body.items():
                fh.write(f"{key} = {fmt(value)}\n")
            fh.write("\n")


class TestConfigValidation:
    def test_repo_config_loads_cleanly(self):
        cfg = load_config(REPO_CONFIG)
        assert cfg.adaptation.n_a == 5
        assert cfg.synthesis.alpha == 4e-5
        assert cfg.synthesis.beta == pytest.approx(1 - 2e-7, abs=1e-12)

    def test_alpha_beta_relation_rejected(self):
        tree = small_tree()
        tree["synthesis"] = {"alpha": 0.5, "beta": 0.4}
        with pytest.raises(ValidationError) as err:
            config_from_dict(tree)
        assert any("alpha" in v and "beta" in v for v in err.value.violations)

    def test_sideband_collision_rejected(self):
        tree = small_tree()
        tree["disturbance"]["harmonics"] = [[120.0, 1.0, 0.0], [126.0, 1.0, 0.0]]
        tree["excitation"] = {"mode": "shaped", "amplitude": 1.0, "delta_u_hz": 6.0,
                              "extra_delta_u_hz": [3.0, 1.5]}
        with pytest.raises(ValidationError) as err:
            config_from_dict(tree)
        assert any("collides" in v for v in err.value.violations)

    def test_insufficient_excitation_order_rejected(self):
        tree = small_tree()
        tree["excitation"] = {"mode": "shaped", "amplitude": 1.0, "delta_u_hz": 3.0}
        tree["adaptation"]["n_a"] = 5
        with pytest.raises(ValidationError) as err:
            config_from_dict(tree)
        assert any("persistency-of-excitation" in v for v in err.value.violations)

    def test_all_violations_reported_at_once(self):
        tree = small_tree()
        tree["synthesis"] = {"alpha": 0.5, "beta": 0.4}
        tree["run"]["decimate"] = 0
        tree["plant"]["noise_sigma"] = -1.0
        with pytest.raises(ValidationError) as err:
            config_from_dict(tree)
        assert len(err.value.violations) >= 3

    def test_unknown_keys_rejected(self):
        tree = small_tree()
        tree["run"]["stepz"] = 10
        with pytest.raises(ValidationError) as err:
            config_from_dict(tree)
        assert any("stepz" in v for v in err.value.violations)
        tree = small_tree()
        tree["imaginary_section"] = {}
        with pytest.raises(ValidationError):
            config_from_dict(tree)

    def test_unstable_explicit_plant_rejected(self):
        tree = small_tree()
        tree["plant"] = {"mode": "explicit", "a": [1.0, -1.5], "b": [0.0, 1.0]}
        tree["adaptation"]["n_a"] = 1
        with pytest.raises(ValidationError) as err:
            config_from_dict(tree)
        assert any("Schur" in v for v in err.value.violations)

    def test_spectrum_window_alignment_rejected(self):
        tree = small_tree()
        tree["run"]["spectrum_window"] = 500  # not a multiple of 348
        with pytest.raises(ValidationError) as err:
            config_from_dict(tree)
        assert any("fundamental period" in v for v in err.value.violations)

    def test_parse_error_reports_line(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[plant\nmode = 'random'\n")
        with pytest.raises(ValidationError) as err:
            load_config(bad)
        assert any("parse error" in v for v in err.value.violations)


class TestCliRun:
    def test_run_writes_all_outputs(self, tmp_path):
        cfg_path = tmp_path / "exp.toml"
        write_toml(small_tree(), cfg_path)
        out = tmp_path / "out"
        rc = cli.main(["run", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        for name in ("trace.csv", "summary.json", "spectrum.csv",
                     "freqresp.csv", "uA_period.csv"):
            assert (out / name).exists(), name

        header = (out / "trace.csv").read_text().splitlines()[0]
        assert header == GOLDEN_TRACE_HEADER
        summary = json.loads((out / "summary.json").read_text())
        assert list(summary.keys()) == GOLDEN_SUMMARY_KEYS

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg_path = tmp_path / "exp.toml"
        write_toml(small_tree(), cfg_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(out1)]) == 0
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(out2)]) == 0
        assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()

    def test_config_error_exit_code(self, tmp_path):
        tree = small_tree()
        tree["synthesis"] = {"alpha": 0.5, "beta": 0.4}
        cfg_path = tmp_path / "bad.toml"
        write_toml(tree, cfg_path)
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 1

    def test_numeric_fault_exit_code(self, tmp_path):
        tree = small_tree()
        tree["excitation"] = {"mode": "prbs", "amplitude": 1e308, "prbs_seed": 1}
        cfg_path = tmp_path / "fault.toml"
        write_toml(tree, cfg_path)
        with np.errstate(over="ignore"):
            rc = cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_zero_step_run_succeeds(self, tmp_path):
        tree = small_tree()
        tree["run"]["steps"] = 0
        tree["run"]["spectrum_window"] = 0
        cfg_path = tmp_path / "zero.toml"
        write_toml(tree, cfg_path)
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert (out / "trace.csv").read_text().splitlines() == [GOLDEN_TRACE_HEADER]


class TestCliVerify:
    def test_suite_passes(self, capsys):
        rc = cli.main(["verify", "excitation", "--seed", "7"])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.count("[PASS]") == 2

    def test_unknown_suite_is_usage_error(self, capsys):
        assert cli.main(["verify", "does-not-exist"]) == 1
        capsys.readouterr()


class TestCliSpectrum:
    def test_disturbance_only_run_reproduces_configured_amplitudes(self, tmp_path):
        # freeze at step 0: no adaptation, no excitation -- disturbance only
        tree = small_tree()
        tree["run"].update(steps=348 * 8, freeze_at=0, settle=348, decimate=1,
                           spectrum_window=348)
        cfg_path = tmp_path / "dist_only.toml"
        write_toml(tree, cfg_path)
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
        spec_out = tmp_path / "spec.csv"
        rc = cli.main([
            "spectrum", "--config", str(cfg_path), "--trace", str(out / "trace.csv"),
            "--out", str(spec_out), "--window", str(348 * 4),
            "--before-start", "696", "--after-start", str(348 * 4),
        ])
        assert rc == 0
        rows = spec_out.read_text().splitlines()
        assert rows[0] == "freq_hz,before_amp,after_amp,attenuation_db"
        before = [float(r.split(",")[1]) for r in rows[1:]]
        assert before == pytest.approx([1.0, 0.8], abs=1e-6)

    def test_misaligned_window_rejected(self, tmp_path):
        tree = small_tree()
        cfg_path = tmp_path / "exp.toml"
        write_toml(tree, cfg_path)
        out = tmp_path / "out"
        cli.main(["run", "--config", str(cfg_path), "--out", str(out)])
        rc = cli.main([
            "spectrum", "--config", str(cfg_path), "--trace", str(out / "trace.csv"),
            "--out", str(tmp_path / "s.csv"), "--window", "500",
        ])
        assert rc == 1

    def test_missing_column_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        tree = small_tree()
        cfg_path = tmp_path / "exp.toml"
        write_toml(tree, cfg_path)
        rc = cli.main([
            "spectrum", "--config", str(cfg_path), "--trace", str(bad),
            "--out", str(tmp_path / "s.csv"),
        ])
        assert rc == 1


class TestCliSweep:
    def test_two_seed_sweep(self, tmp_path):
        tree = small_tree()
        tree["run"]["steps"] = 400
        tree["run"]["spectrum_window"] = 0
        cfg_path = tmp_path / "exp.toml"
        write_toml(tree, cfg_path)
        out = tmp_path / "sweep"
        rc = cli.main([
            "sweep", "--config", str(cfg_path), "--seeds", "1,2",
            "--out", str(out), "--workers", "2",
        ])
        assert rc == 0
        merged = json.loads((out / "sweep_summary.json").read_text())
        assert [m["seed"] for m in merged] == [1, 2]
        for seed in (1, 2):
            assert (out / f"seed_{seed}" / "trace.csv").exists()
            assert (out / f"seed_{seed}" / "summary.json").exists()
