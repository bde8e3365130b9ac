import csv
import json
import math

import numpy as np
import pytest
from patchflow.sim.runner import (
    STATUS_BLOWUP,
    STATUS_COMPLETED,
    Simulation,
    decay_study,
    init_only,
    run,
    verify_identities,
    verify_operators,
)


def _rows(path):
    with path.open(encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def test_constant_state_run_is_quiet(tmp_path, tiny_config):
    out = tmp_path / "run"
    summary = run(tiny_config(), out)
    assert summary.status == STATUS_COMPLETED
    assert summary.passed
    assert {v.name for v in summary.verdicts} >= {"energy", "monotone_functionals", "lagrangian_mass"}

    series = _rows(out / "time_series.csv")
    assert [int(r["step"]) for r in series] == [0, 1, 2, 3, 4, 5]
    assert series[0]["dt"] == ""
    assert all(abs(float(r["energy_residual"])) < 1e-12 for r in series)
    assert all(float(r["u_max"]) < 1e-12 for r in series)
    recorded = [r for r in series if r["flux_residual"] != ""]
    assert recorded and all(float(r["flux_residual"]) < 1e-10 for r in recorded)

    markers = _rows(out / "markers.csv")
    assert {int(r["step"]) for r in markers} == {0, 2, 4, 5}
    assert len(markers) == 4 * 64

    data = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert data["status"] == STATUS_COMPLETED
    assert data["c0"] == 0.0
    assert data["provenance"]["seed"] == 0
    assert set(data["damping_ratio"]) == {"2", "3", "5"}
    assert (out / "smallness.json").exists()


def test_failed_check_is_reported(tmp_path, tiny_config):
    summary = run(tiny_config(checks={"energy": -1.0}), tmp_path / "run")
    assert summary.status == STATUS_COMPLETED
    assert not summary.passed
    energy = next(v for v in summary.verdicts if v.name == "energy")
    assert energy.as_dict()["verdict"] == "FAIL"


def test_blowup_monitor_halts_run(tmp_path, tiny_config):
    summary = run(tiny_config(monitors={"c_gamma": 0.0}), tmp_path / "run")
    assert summary.status == STATUS_BLOWUP
    assert "c_gamma" in summary.message
    assert "monitor_report" in summary.extra
    data = json.loads((tmp_path / "run" / "summary.json").read_text(encoding="utf-8"))
    assert data["status"] == STATUS_BLOWUP


def test_max_steps_stops_early(tmp_path, tiny_config):
    sim = Simulation(tiny_config(run={"max-steps": 2}), tmp_path / "run")
    sim.run()
    assert sim.state.step == 2
    assert sim.state.t == pytest.approx(0.02)


def test_restart_continues_from_checkpoint(tmp_path, tiny_config):
    first = tmp_path / "first"
    run(tiny_config(run={"checkpoint-every": 2, "end-time": 0.03}), first)
    checkpoint = first / "checkpoints" / "step_000002.npz"
    assert checkpoint.exists()

    second = tmp_path / "second"
    sim = Simulation(tiny_config(run={"restart-from": str(checkpoint)}), second)
    summary = sim.run()
    assert summary.status == STATUS_COMPLETED
    assert sim.state.t == pytest.approx(0.05)
    assert "c0" not in summary.as_dict()
    assert not (second / "smallness.json").exists()
    assert int(_rows(second / "time_series.csv")[0]["step"]) == 2


def test_restart_rejects_other_grid(tmp_path, tiny_config):
    from patchflow.sim.errors import InvalidStateError

    first = tmp_path / "first"
    init_only(tiny_config(), first)
    cfg = tiny_config(grid={"n": 64}, run={"restart-from": str(first / "initial.npz")})
    with pytest.raises(InvalidStateError, match="does not match"):
        Simulation(cfg, tmp_path / "second").prepare()


def test_heatmaps_written_with_checkpoints(tmp_path, tiny_config):
    out = tmp_path / "run"
    run(tiny_config(run={"checkpoint-every": 5}, output={"heatmaps": True, "log-file": ""}), out)
    assert (out / "checkpoints" / "step_000005.npz").exists()
    for name in ("rho", "flux", "rot"):
        assert (out / "heatmaps" / f"{name}_000005.png").exists()


def test_verify_operators_passes():
    report = verify_operators(n=32, seed=3, samples=10)
    assert report["passed"]
    names = {c["name"] for c in report["checks"]}
    assert {"symbol_K", "symbol_K_prime", "identity_K_div", "identity_K_prime_rot"} <= names
    assert all(c["value"] <= c["threshold"] for c in report["checks"])


def test_verify_identities_on_constant_state(tmp_path, tiny_config):
    cfg = tiny_config(diagnostics={"identities": False, "jumps": False, "holder": False, "hoff2": False})
    summary, report = verify_identities(cfg, tmp_path / "ids")
    assert summary.status == STATUS_COMPLETED
    assert report["passed"]
    names = {c["name"] for c in report["checks"]}
    assert {"energy", "flux", "vorticity", "lagrangian_mass"} <= names
    assert json.loads((tmp_path / "ids" / "identities.json").read_text(encoding="utf-8"))["passed"]


def test_init_only_writes_report_and_checkpoint(tmp_path, tiny_config):
    report = init_only(tiny_config(), tmp_path / "init")
    assert report["c0"] == 0.0
    assert report["composite"] == 0.0
    assert (tmp_path / "init" / "initial.npz").exists()
    saved = json.loads((tmp_path / "init" / "smallness.json").read_text(encoding="utf-8"))
    assert saved["provenance"]["config_hash"] == report["provenance"]["config_hash"]


def test_init_only_reports_patch_jump(tmp_path, tiny_config):
    report = init_only(tiny_config(patch={"inside": {"base": 1.1}}), tmp_path / "init")
    assert report["c0"] > 0.0
    assert report["terms"]["rho_jump_inf"] == pytest.approx(0.1, rel=0.05)


@pytest.mark.slow
def test_decay_study_at_rest_recovers_nu(tmp_path, tiny_config):
    cfg = tiny_config(
        laws={"pressure": "proportional", "a": 1.0, "kappa": 1.0, "mu": 1.0, "b": 0.0, "rho-ref": 1.0},
        patch={"inside": {"base": 1.2}},
        velocity={"mode": "target"},
        step={"adaptive": False, "dt": 0.01, "frozen-velocity": True, "flux": "zero"},
        run={"end-time": 0.25, "record-every": 1, "seed": 0},
        diagnostics={"identities": False, "holder": False, "hoff2": False},
    )
    summary, report = decay_study(cfg, tmp_path / "decay", exponents=[4.0, "inf"])
    assert summary.status == STATUS_COMPLETED
    assert report["at_rest"]
    assert report["nu_low"] == pytest.approx(1.0, rel=1e-3)
    assert {fit["p"] for fit in report["fits"]} == {4.0, math.inf}
    for fit in report["fits"]:
        assert fit["samples"] >= 20
        assert fit["fitted_rate"] == pytest.approx(-1.0, rel=0.02)
    assert report["passed"]
    assert (tmp_path / "decay" / "decay.json").exists()


def test_decay_study_without_enough_records_fails(tmp_path, tiny_config):
    summary, report = decay_study(tiny_config(), tmp_path / "decay")
    assert summary.status == STATUS_COMPLETED
    assert report["fits"] == []
    assert not report["passed"]
    assert np.isfinite(report["nu_low"])


def _non_decreasing(values, slack=1e-10):
    finite = [v for v in values if math.isfinite(v)]
    return all(b >= a - slack * max(1.0, abs(a)) for a, b in zip(finite, finite[1:]))


@pytest.mark.slow
def test_moving_patch_keeps_ledgers_balanced(tmp_path, tiny_config):
    out = tmp_path / "run"
    cfg = tiny_config(
        patch={"inside": {"base": 1.1}},
        velocity={"vortices": [{"amplitude": 0.05, "width": 1.5}]},
        run={"end-time": 0.3, "record-every": 5},
    )
    sim = Simulation(cfg, out)
    summary = sim.run()
    assert summary.status == STATUS_COMPLETED
    assert sim.state.step == 30
    assert sim.state.u.any()

    assert sim.ledger.relative_residual < 0.05
    assert sim.monotone_violations == 0
    mass = [r["lagrangian_mass"] for r in sim.records if r.get("lagrangian_mass") is not None]
    assert mass and max(mass) < 0.01
    flux = [r["flux_residual"] for r in sim.records if r.get("flux_residual") is not None]
    flux = [v for v in flux if math.isfinite(v)]
    assert flux and max(flux) < 0.5

    series = _rows(out / "time_series.csv")
    assert len(series) == 31
    for column in ("a1", "a2", "a3", "theta"):
        values = [float(r[column]) for r in series if r[column] != ""]
        assert _non_decreasing(values), column
    assert float(series[-1]["a1"]) > 0
