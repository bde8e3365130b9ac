import math

import numpy as np
import pytest
from patchflow.sim.errors import BlowupError, InvalidStateError
from patchflow.sim.initdata import build_initial_state
from patchflow.sim.solver import (
    ManufacturedShear,
    build_force,
    cfl_dt,
    f_value_step,
    full_step,
    split_viscosity,
    zero_flux,
)
from patchflow.sim.state import ParticleCloud
from patchflow.sim.utils import ForceConfig, StepConfig

SHEAR = {
    "grid": {"n": 32, "L": 2 * math.pi, "lattice-factor": 2, "markers": 64},
    "laws": {"mu": 0.1, "b": 0.0},
    "patch": {"radius": 1.5, "inside": {"base": 1.0}},
    "step": {"adaptive": False, "dt": 0.002, "force": {"amplitude": 0.1, "mode": 1}},
}


def _cloud(fval):
    fval = np.asarray(fval, dtype=float)
    pts = np.zeros((len(fval), 2))
    return ParticleCloud(
        labels=pts, x=pts, fval=fval, inside=np.zeros(len(fval), bool),
        log_j=np.zeros(len(fval)), rho0=np.ones(len(fval)), volume=1.0,
    )


def test_split_viscosity_defaults_to_reference(gamma_laws):
    assert split_viscosity(gamma_laws, StepConfig()) == (1.0, 1.5)
    assert split_viscosity(gamma_laws, StepConfig(**{"mu-split": 2.0})) == (2.0, 2.5)


def test_cfl_dt(tiny_config):
    initial = build_initial_state(tiny_config())
    assert cfl_dt(initial.state, StepConfig(adaptive=False, dt=0.003)) == 0.003
    # resting constant state: only dt-max binds
    assert cfl_dt(initial.state, StepConfig(**{"dt-max": 0.02})) == 0.02
    moving = initial.state.advanced(u=np.full_like(initial.state.u, 2.0))
    expected = 0.4 * initial.state.grid.h / math.sqrt(8.0)
    assert cfl_dt(moving, StepConfig(**{"dt-max": 1.0})) == pytest.approx(expected)


def test_constant_state_is_a_fixed_point(tiny_config):
    cfg = tiny_config()
    state = build_initial_state(cfg).state
    assert not np.any(state.u)
    for _ in range(3):
        state, report = full_step(state, cfg.step)
    assert state.step == 3
    assert state.t == pytest.approx(0.03)
    assert np.max(np.abs(state.u)) < 1e-12
    assert np.allclose(state.rho, 1.0, atol=1e-12)
    assert report.markers == cfg.grid.markers
    assert report.dt == 0.01


def test_non_positive_dt_is_rejected(tiny_config):
    cfg = tiny_config()
    state = build_initial_state(cfg).state
    with pytest.raises(InvalidStateError, match="non-positive"):
        full_step(state, cfg.step, dt=0.0)


def test_manufactured_shear_is_reproduced(tiny_config):
    cfg = tiny_config(**SHEAR)
    state = build_initial_state(cfg).state
    force = build_force(state.grid, state.laws, cfg.step.force)
    assert np.allclose(state.u, force.velocity(0.0))
    for _ in range(25):
        state, _ = full_step(state, cfg.step, force)
    error = np.max(np.abs(state.u - force.velocity(state.t)))
    assert error < 1e-4
    assert np.allclose(state.rho, 1.0, atol=1e-8)


def test_manufactured_shear_is_divergence_free(grid, gamma_laws):
    shear = ManufacturedShear(grid, gamma_laws, ForceConfig(amplitude=0.2, mode=2))
    assert np.allclose(grid.divergence(shear.velocity(0.7)), 0.0, atol=1e-12)
    # at t = 0 the flow is a pure x1-shear
    assert np.allclose(shear.velocity(0.0)[1], 0.0)


def test_manufactured_force_needs_constant_viscosity(grid, affine_laws):
    with pytest.raises(InvalidStateError, match="constant viscosity"):
        build_force(grid, affine_laws, ForceConfig())
    assert build_force(grid, affine_laws, None) is None


def test_f_value_relaxes_exponentially_without_flux(proportional_laws):
    cloud = _cloud([0.5, -0.3, 0.0])
    for _ in range(100):
        cloud = f_value_step(cloud, zero_flux, proportional_laws, 0.01)
    assert np.allclose(cloud.fval, np.array([0.5, -0.3, 0.0]) * math.exp(-1.0), rtol=1e-4)


def test_f_value_blowup_is_reported(gamma_laws):
    def violent(points, fval, rho, theta):
        return np.full(len(points), 1e3)

    with pytest.raises(BlowupError) as info:
        f_value_step(_cloud([0.0]), violent, gamma_laws, 0.1)
    assert info.value.report["band"] == [gamma_laws.a_lo, gamma_laws.a_hi]


def test_frozen_velocity_keeps_u(tiny_config):
    cfg = tiny_config(
        velocity={"mode": "target", "vortices": [{"amplitude": 0.05, "width": 1.5}]},
        step={"frozen-velocity": True, "flux": "zero"},
    )
    state = build_initial_state(cfg).state
    u0 = state.u.copy()
    state, _ = full_step(state, cfg.step)
    assert np.array_equal(state.u, u0)
    assert np.array_equal(state.u_prev, u0)


def _shear_error(tiny_config, dt, end_time=0.2):
    cfg = tiny_config(**{**SHEAR, "step": {**SHEAR["step"], "dt": dt}})
    state = build_initial_state(cfg).state
    force = build_force(state.grid, state.laws, cfg.step.force)
    for _ in range(round(end_time / dt)):
        state, _ = full_step(state, cfg.step, force)
    assert state.t == pytest.approx(end_time)
    return float(np.max(np.abs(state.u - force.velocity(state.t))))


@pytest.mark.slow
def test_manufactured_shear_is_second_order_in_time(tiny_config):
    errors = [_shear_error(tiny_config, dt) for dt in (4e-3, 2e-3, 1e-3)]
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    assert min(orders) >= 1.9
    assert errors[-1] < 1e-7


def test_single_mode_shear_decays_at_viscous_rate(tiny_config):
    unforced = {**SHEAR, "step": {"adaptive": False, "dt": 0.002}}
    cfg = tiny_config(**unforced)
    state = build_initial_state(cfg).state
    _, x2 = state.grid.coords
    k, amplitude = 2.0, 0.05
    profile = np.sin(k * x2)
    state = state.advanced(u=np.stack([amplitude * profile, np.zeros_like(profile)]))
    for _ in range(50):
        state, _ = full_step(state, cfg.step)

    # project onto the initial mode
    measured = float(np.sum(state.u[0] * profile) / np.sum(profile * profile))
    rate = -math.log(measured / amplitude) / state.t
    mu, rho = state.laws.mu_ref, state.laws.rho_ref
    assert rate == pytest.approx(mu * k**2 / rho, rel=1e-3)
    assert np.max(np.abs(state.u[1])) < 1e-10
