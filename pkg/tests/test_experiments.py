import json
import subprocess
import sys

import numpy as np
import pytest

from gamegap import ConfigurationError
from gamegap.experiments import (
    ExperimentConfig,
    run_gap_sweep,
    run_universality_sweep,
    run_viscosity_sweep,
    write_csv,
)


def small_gap_config(**kw):
    base = dict(kind="gap", model={"kind": "lq_network", "a_f": 1.0, "a_g": 1.0,
                                   "q_f": 1.0, "q_g": 1.0},
                n_list=(2, 4, 8), n_paths=24, n_steps=40, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_config_rejects_non_increasing_n_list():
    with pytest.raises(ConfigurationError):
        small_gap_config(n_list=(4, 4, 8))
    with pytest.raises(ConfigurationError):
        small_gap_config(n_list=(8, 4, 2))


def test_config_rejects_short_n_list():
    with pytest.raises(ConfigurationError):
        small_gap_config(n_list=(2, 4))


def test_viscosity_rejects_beta_half():
    with pytest.raises(ConfigurationError, match="sqrt"):
        ExperimentConfig(kind="viscosity",
                         model={"kind": "lq_network", "a_f": 1, "a_g": 1,
                                "q_f": 1, "q_g": 1},
                         n_list=(4, 8, 16), sigma_rule={"c": 1.0, "beta": 0.5})


def test_config_from_json_round_trip():
    doc = {
        "experiment": "gap",
        "game": {"model": {"kind": "lq_network", "a_f": 1.0, "a_g": 1.0,
                           "q_f": 1.0, "q_g": 1.0},
                 "d": 1, "T": 1.0, "n_steps": 50, "sigma": 1.0, "sigma0": 0.0,
                 "initial_law": {"kind": "product_gaussian", "mean": 0.0,
                                 "scale": 1.0}},
        "n_list": [2, 4, 8],
        "n_paths": 16,
        "seed": 9,
    }
    cfg = ExperimentConfig.from_json(doc)
    assert cfg.kind == "gap"
    assert cfg.n_list == (2, 4, 8)
    assert cfg.echo()["seed"] == 9


# ---------------------------------------------------------------------------
# gap sweep
# ---------------------------------------------------------------------------

def test_gap_sweep_zero_interaction_degenerate():
    cfg = small_gap_config(model={"kind": "lq_network", "a_f": 0.0, "a_g": 0.0,
                                  "q_f": 1.0, "q_g": 1.0},
                           graph={"kind": "zero"})
    report = run_gap_sweep(cfg)
    assert report.degenerate
    assert report.fits == {}
    assert any("degenerate zeros" in w for w in report.warnings)
    for row in report.rows:
        assert row["gap_cl_ol"] < 1e-20
        assert row["gap_ol_dist"] < 1e-20


def test_gap_sweep_internal_consistency():
    report = run_gap_sweep(small_gap_config())
    for row in report.rows:
        assert row["gap_cl_ol_per_player"] * row["n"] == pytest.approx(
            row["gap_cl_ol"], rel=1e-12)
        assert row["gap_cl_ol"] > 0
        assert np.isfinite(row["theory_weak1_over_sigma"])
    assert "gap_cl_ol" in report.fits
    assert len(report.fingerprints) == 3


def test_gap_sweep_reproducible():
    r1 = run_gap_sweep(small_gap_config())
    r2 = run_gap_sweep(small_gap_config())
    assert r1.rows == r2.rows
    assert r1.fingerprints == r2.fingerprints


def test_gap_sweep_rejects_common_noise():
    with pytest.raises(ConfigurationError):
        run_gap_sweep(small_gap_config(sigma0=0.5))


# ---------------------------------------------------------------------------
# universality sweep
# ---------------------------------------------------------------------------

def test_universality_sweep_lq_complete():
    cfg = ExperimentConfig(
        kind="universality",
        model={"kind": "lq_network", "a_f": 1.0, "a_g": 1.0, "q_f": 1.0,
               "q_g": 1.0},
        n_list=(4, 8, 16), n_paths=32, n_steps=40, seed=1)
    report = run_universality_sweep(cfg)
    assert len(report.rows) == 3
    assert "gap_ol_mfg_pp_max" in report.fits
    for row in report.rows:
        assert row["gap_cl_ol_full"] > 0
        assert row["theory_dd_product"] > 0
        assert row["rho_theory"] > 0
    # complete graphs shrink the dd statistic: no hypothesis warning
    assert report.warnings == []


def test_universality_flags_fixed_degree_family():
    cfg = ExperimentConfig(
        kind="universality",
        model={"kind": "lq_network", "a_f": 1.0, "a_g": 1.0, "q_f": 1.0,
               "q_g": 1.0},
        graph={"kind": "circulant_k_regular", "k": 2},
        n_list=(8, 16, 32), n_paths=8, n_steps=30, seed=2)
    report = run_universality_sweep(cfg)
    assert any("not decreasing" in w for w in report.warnings)


def test_universality_phi_deterministic():
    cfg = ExperimentConfig(
        kind="universality",
        model={"kind": "phi_network", "a": 1.0, "phi": "tanh"},
        sigma=0.0, sigma0=0.0,
        n_list=(3, 5, 9), n_paths=6, n_steps=30, seed=4)
    report = run_universality_sweep(cfg)
    assert len(report.rows) == 3
    for row in report.rows:
        assert row["gap_cl_ol_full"] is None  # closed loop is LQ-only
        assert row["gap_ol_mfg_pp_max"] > 0
    gaps = [row["gap_ol_mfg_pp_max"] for row in report.rows]
    assert gaps[-1] < gaps[0]


def test_universality_phi_requires_zero_sigma():
    cfg = ExperimentConfig(
        kind="universality",
        model={"kind": "phi_network", "a": 1.0, "phi": "tanh"},
        sigma=1.0, n_list=(3, 5, 9), n_paths=4, n_steps=20, seed=0)
    with pytest.raises(ConfigurationError):
        run_universality_sweep(cfg)


# ---------------------------------------------------------------------------
# viscosity sweep
# ---------------------------------------------------------------------------

def test_viscosity_sweep_small():
    cfg = ExperimentConfig(
        kind="viscosity",
        model={"kind": "lq_network", "a_f": 1.0, "a_g": 1.0, "q_f": 1.0,
               "q_g": 1.0},
        n_list=(8, 32, 128), n_paths=48, n_steps=40, seed=5,
        sigma_rule={"c": 1.0, "beta": 0.25})
    report = run_viscosity_sweep(cfg)
    assert report.strictly_decreasing
    assert report.fit is not None
    assert report.fit.r2 > 0.5
    for row in report.rows:
        assert row["sigma_n"] == pytest.approx(row["n"] ** -0.25)


def test_viscosity_no_interaction_tracks_sigma():
    # a_f = a_g = 0: the gap reduces to pure idiosyncratic-noise
    # discrepancy, proportional to sigma_N (log-log slope near 1)
    cfg = ExperimentConfig(
        kind="viscosity",
        model={"kind": "lq_network", "a_f": 0.0, "a_g": 0.0, "q_f": 1.0,
               "q_g": 1.0},
        n_list=(8, 64, 512), n_paths=64, n_steps=40, seed=6,
        sigma_rule={"c": 1.0, "beta": 0.25})
    report = run_viscosity_sweep(cfg)
    from gamegap.measures import fit_loglog
    fit = fit_loglog([row["sigma_n"] for row in report.rows],
                     [row["gap_pp_max"] for row in report.rows])
    assert 0.8 <= fit.slope <= 1.2


# ---------------------------------------------------------------------------
# CSV determinism and CLI
# ---------------------------------------------------------------------------

def test_write_csv_formatting(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b"], [{"a": 1, "b": 0.5}, {"a": 2, "b": None}],
              footer_lines=["# tail"])
    text = path.read_bytes().decode()
    assert text.splitlines()[0] == "a,b"
    assert "5.000000000000e-01" in text
    assert text.endswith("# tail\n")
    assert "\r" not in text


GAP_CONFIG = {
    "experiment": "gap",
    "game": {"model": {"kind": "lq_network", "a_f": 1.0, "a_g": 1.0,
                       "q_f": 1.0, "q_g": 1.0},
             "d": 1, "T": 1.0, "n_steps": 30, "sigma": 1.0, "sigma0": 0.0,
             "initial_law": {"kind": "product_gaussian", "mean": 0.0,
                             "scale": 1.0}},
    "n_list": [2, 4, 8],
    "n_paths": 12,
    "seed": 21,
}


def _run_cli(tmp_path, name, config, *extra):
    cfg_path = tmp_path / f"{name}.json"
    cfg_path.write_text(json.dumps(config))
    out_dir = tmp_path / f"{name}_out"
    proc = subprocess.run(
        [sys.executable, "-m", "gamegap.cli", name.split("_")[0],
         str(cfg_path), "--out", str(out_dir), *extra],
        capture_output=True, text=True)
    return proc, out_dir


def test_cli_gap_byte_identical_reruns(tmp_path):
    p1, out1 = _run_cli(tmp_path, "gap_a", GAP_CONFIG)
    assert p1.returncode == 0, p1.stderr
    p2, out2 = _run_cli(tmp_path, "gap_b", GAP_CONFIG)
    assert p2.returncode == 0, p2.stderr
    b1 = (out1 / "gap_report.csv").read_bytes()
    b2 = (out2 / "gap_report.csv").read_bytes()
    assert b1 == b2
    assert (out1 / "summary.json").exists()


def test_cli_exit_code_config_error(tmp_path):
    bad = dict(GAP_CONFIG)
    bad["n_list"] = [4]
    proc, _ = _run_cli(tmp_path, "gap_bad", bad)
    assert proc.returncode == 2
    assert "configuration error" in proc.stderr


def test_cli_exit_code_solver_failure(tmp_path):
    # strongly anti-monotone data blows up the Riccati flow
    bad = json.loads(json.dumps(GAP_CONFIG))
    bad["game"]["model"].update({"q_f": -40.0, "a_f": 0.0})
    bad["game"]["T"] = 2.0
    proc, _ = _run_cli(tmp_path, "gap_blow", bad)
    assert proc.returncode == 3
    assert "solver failure" in proc.stderr


def test_cli_seed_override_changes_output(tmp_path):
    p1, out1 = _run_cli(tmp_path, "gap_c", GAP_CONFIG)
    p2, out2 = _run_cli(tmp_path, "gap_d", GAP_CONFIG, "--seed", "99")
    assert p1.returncode == 0 and p2.returncode == 0
    assert (out1 / "gap_report.csv").read_bytes() != \
        (out2 / "gap_report.csv").read_bytes()


def test_cli_check_prints_table(tmp_path):
    cfg = {"game": GAP_CONFIG["game"] | {"n": 4, "weights": None}}
    # build explicit weights for a 4-player complete graph
    w = [0.0 if i == j else 1.0 / 3.0 for i in range(4) for j in range(4)]
    cfg["game"]["n"] = 4
    cfg["game"]["weights"] = w
    cfg_path = tmp_path / "check.json"
    cfg_path.write_text(json.dumps(cfg))
    proc = subprocess.run(
        [sys.executable, "-m", "gamegap.cli", "check", str(cfg_path),
         "--out", str(tmp_path / "check_out")],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "displacement_monotone" in proc.stdout
    assert "weak1" in proc.stdout
    assert (tmp_path / "check_out" / "check.json").exists()


def test_cli_solve_writes_equilibria_and_trajectories(tmp_path):
    cfg = {"game": dict(GAP_CONFIG["game"]), "members": ["open_loop",
                                                         "distributed"],
           "n_paths": 4, "seed": 2}
    w = [0.0 if i == j else 1.0 / 2.0 for i in range(3) for j in range(3)]
    cfg["game"]["n"] = 3
    cfg["game"]["weights"] = w
    cfg_path = tmp_path / "solve.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "solve_out"
    proc = subprocess.run(
        [sys.executable, "-m", "gamegap.cli", "solve", str(cfg_path),
         "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out / "equilibrium_open_loop.json").exists()
    assert (out / "equilibrium_distributed.json").exists()
    text = (out / "trajectories.csv").read_text()
    header = text.splitlines()[0]
    assert header == "path_id,step,time,member_kind,player,x0,a0"


def test_cli_fgrate_runs(tmp_path):
    cfg = {"q": 4, "r": 1, "sizes": [16, 32, 64], "profiles": ["uniform"],
           "mc_reps": 16, "seed": 3}
    cfg_path = tmp_path / "fg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "fg_out"
    proc = subprocess.run(
        [sys.executable, "-m", "gamegap.cli", "fgrate", str(cfg_path),
         "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    lines = (out / "fgrate.csv").read_text().splitlines()
    assert lines[0] == "profile_id,K,estimate,std_error,rho_theory"
    assert any(line.startswith("# ratefit uniform:") for line in lines)
