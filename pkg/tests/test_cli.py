"""End-to-end CLI behavior: commands, files, exit codes, idempotence."""

import json

import numpy as np
import pytest

from wnlab import dataio
from wnlab.cli import main
from wnlab.model import ProblemInstance


def run_cli(*argv):
    return main(list(argv))


def test_prob_small_case(capsys):
    assert run_cli("prob", "--n", "2", "--k", "1") == 0
    assert capsys.readouterr().out.strip() == "0.5"


def test_prob_from_m(capsys):
    assert run_cli("prob", "--n", "10", "--m", "3") == 0
    out = float(capsys.readouterr().out)
    assert out == pytest.approx(466 / 512)


def test_prob_usage_error():
    assert run_cli("prob", "--n", "5") == 1


def test_gen_roundtrip(tmp_path, capsys):
    out = tmp_path / "inst"
    assert run_cli(
        "gen", "--n", "12", "--m", "4", "--ground-truth", "sparse_abs",
        "--s", "3", "--seed", "5", "--out", str(out),
    ) == 0
    inst = dataio.load_instance(out)
    assert inst.A.shape == (4, 12)
    assert np.count_nonzero(inst.x_star) == 3


def test_run_and_summary(tmp_path, capsys):
    inst_dir = tmp_path / "inst"
    run_cli("gen", "--n", "16", "--m", "6", "--seed", "3", "--out", str(inst_dir))
    out = tmp_path / "run"
    code = run_cli(
        "run", "--inst", str(inst_dir), "--variant", "wn_constant",
        "--r0", "0.5", "--loss-tol", "1e-10", "--max-iters", "30000",
        "--out", str(out),
    )
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["reason"] == "loss_tol"
    assert set(summary) == {"reason", "iters", "final_loss", "l1_of_xtilde"}
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith("iter,t,loss,r,u0000")


def test_run_is_idempotent(tmp_path):
    inst_dir = tmp_path / "inst"
    run_cli("gen", "--n", "10", "--m", "4", "--seed", "1", "--out", str(inst_dir))
    a, b = tmp_path / "a", tmp_path / "b"
    args = (
        "run", "--inst", str(inst_dir), "--variant", "plain",
        "--loss-tol", "1e-9", "--max-iters", "5000", "--seed", "2",
    )
    run_cli(*args, "--out", str(a))
    run_cli(*args, "--out", str(b))
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


def test_oracle_feasible_and_infeasible(tmp_path, capsys):
    feas = tmp_path / "feas"
    dataio.save_instance(ProblemInstance(A=[[1.0, 2.0]], b=[2.0]), feas)
    out = tmp_path / "sol.json"
    assert run_cli("oracle", "--inst", str(feas), "--out", str(out)) == 0
    payload = json.loads(out.read_text())
    assert payload["status"] == "optimal"
    assert payload["objective"] == pytest.approx(1.0)
    assert payload["z"] == pytest.approx([0.0, 1.0])

    infeas = tmp_path / "infeas"
    dataio.save_instance(ProblemInstance(A=[[1.0, 1.0]], b=[-1.0]), infeas)
    out2 = tmp_path / "sol2.json"
    assert run_cli("oracle", "--inst", str(infeas), "--out", str(out2)) == 0
    assert json.loads(out2.read_text())["status"] == "infeasible"


def test_oracle_witness(tmp_path):
    d = tmp_path / "inst"
    dataio.save_instance(ProblemInstance(A=[[1.0, -1.0]], b=[0.0]), d)
    out = tmp_path / "w.json"
    assert run_cli("oracle", "--inst", str(d), "--witness", "--out", str(out)) == 0
    payload = json.loads(out.read_text())
    assert payload["witness_exists"] is True
    assert min(payload["witness"]) > 0


def test_oracle_missing_instance_is_data_error(tmp_path):
    assert run_cli(
        "oracle", "--inst", str(tmp_path / "nope"), "--out", str(tmp_path / "o.json")
    ) == 2


def test_sweep_from_config(tmp_path):
    cfg = {
        "N": 14,
        "M": 5,
        "ground_truth": "gaussian_abs",
        "sweep": [[1.0, 0.1, "plain"], [1.0, 0.1, "wn_constant"]],
        "trials": 2,
        "seed": 3,
        "flow": {"step": "linesearch", "max_iters": 20000, "loss_tol": 1e-10},
    }
    cfg_path = tmp_path / "spec.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "sweep"
    assert run_cli("sweep", "--config", str(cfg_path), "--out", str(out)) == 0
    results = (out / "results.csv").read_text().splitlines()
    assert len(results) == 5  # header + 4 trials
    summary = (out / "summary.csv").read_text().splitlines()
    assert len(summary) == 3


def test_sweep_flag_overrides_file(tmp_path):
    cfg = {
        "N": 12, "M": 4, "sweep": [[0.5, 0.1, "plain"]], "trials": 3, "seed": 1,
        "flow": {"step": "linesearch", "max_iters": 5000, "loss_tol": 1e-9},
    }
    cfg_path = tmp_path / "spec.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "o"
    assert run_cli(
        "sweep", "--config", str(cfg_path), "--trials", "1", "--out", str(out)
    ) == 0
    assert len((out / "results.csv").read_text().splitlines()) == 2


def test_sweep_bad_config_is_data_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run_cli("sweep", "--config", str(p), "--out", str(tmp_path / "x")) == 2


def test_reproduce_unknown_figure_is_usage_error(tmp_path):
    # argparse rejects the bad choice with exit code 1
    with pytest.raises(SystemExit) as exc:
        main(["reproduce", "--figure", "fig9", "--out", str(tmp_path)])
    assert exc.value.code == 1


def test_reproduce_paper_refused_without_budget_flag(tmp_path, capsys):
    assert run_cli(
        "reproduce", "--figure", "fig2", "--scale", "paper", "--out", str(tmp_path)
    ) == 1
    assert "accept-runtime" in capsys.readouterr().out


def test_reproduce_fig3_tiny(tmp_path):
    out = tmp_path / "fig3"
    code = run_cli(
        "reproduce", "--figure", "fig3", "--scale", "desk",
        "--n", "20", "--m", "6", "--trials", "1", "--max-iters", "40000",
        "--out", str(out),
    )
    assert code == 0
    panel_a = (out / "panel_a.csv").read_text().splitlines()
    assert panel_a[0].startswith("# figure=fig3 panel=a x=eta_ratio y=eps1")
    assert panel_a[1] == "eta_ratio,variant,eps1_mean,eps1_min,eps1_max"
    assert (out / "panel_b.csv").exists()
    assert (out / "results.csv").exists()
    assert (out / "summary.csv").exists()


def test_audit_fresh_wn_run(tmp_path, capsys):
    out = tmp_path / "audit"
    code = run_cli(
        "audit", "--n", "12", "--m", "4", "--seed", "2",
        "--variant", "wn_constant", "--r0", "0.4", "--eta-ratio", "0.2",
        "--step", "fixed:0.002", "--max-iters", "4000", "--loss-tol", "1e-300",
        "--out", str(out),
    )
    assert code == 0
    checks = json.loads((out / "checks.json").read_text())
    assert checks["u_norm_unit"] == "pass"
    assert checks["positivity"] == "pass"
    assert "h_eta_conserved" in checks
    assert "comparison_identity" in checks
    drift = json.loads((out / "drift_report.json").read_text())
    assert any(d["quantity"] == "h_eta" for d in drift)
    series = (out / "invariants.csv").read_text().splitlines()
    assert series[0] == "t,u_norm,min_entry,gamma,h0_drift,h_eta_drift"


def test_audit_plain_skips_polar_checks(tmp_path):
    out = tmp_path / "audit"
    assert run_cli(
        "audit", "--n", "10", "--m", "4", "--seed", "1", "--variant", "plain",
        "--r0", "1.0", "--step", "fixed:0.001", "--max-iters", "2000",
        "--loss-tol", "1e-300", "--out", str(out),
    ) == 0
    checks = json.loads((out / "checks.json").read_text())
    assert checks["h_eta_conserved"] == "skipped (plain run)"
    assert "h0_conserved" in checks


def test_audit_loaded_trajectory(tmp_path):
    inst_dir = tmp_path / "inst"
    run_cli("gen", "--n", "10", "--m", "4", "--seed", "4", "--out", str(inst_dir))
    run_dir = tmp_path / "run"
    run_cli(
        "run", "--inst", str(inst_dir), "--variant", "wn_constant", "--r0", "0.5",
        "--step", "fixed:0.002", "--max-iters", "3000", "--loss-tol", "1e-300",
        "--snapshot-stride", "50", "--out", str(run_dir),
    )
    out = tmp_path / "audit"
    code = run_cli(
        "audit", "--inst", str(inst_dir), "--traj", str(run_dir / "trajectory.csv"),
        "--variant", "wn_constant", "--step", "fixed:0.002", "--out", str(out),
    )
    assert code == 0
    checks = json.loads((out / "checks.json").read_text())
    assert checks["u_norm_unit"] == "pass"


def test_audit_corrupt_trajectory_is_data_error(tmp_path):
    inst_dir = tmp_path / "inst"
    run_cli("gen", "--n", "6", "--m", "2", "--seed", "4", "--out", str(inst_dir))
    bad = tmp_path / "bad.csv"
    bad.write_text("iter,t,loss,x0000\n0,0,1,0.5\n1,zzz,0.9,0.4\n")
    assert run_cli(
        "audit", "--inst", str(inst_dir), "--traj", str(bad), "--out", str(tmp_path / "a")
    ) == 2
