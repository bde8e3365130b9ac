import math

import numpy as np
import pytest
from patchflow.sim.diagnostics import (
    EnergyLedger,
    EnergyReport,
    HoffFunctionals,
    ThetaFunctional,
    classical_energy,
    hoff_functionals,
    pressure_damping,
    sigma,
    theta_functional,
)


def _report(energy, rate):
    return EnergyReport(energy=energy, kinetic=energy, potential=0.0, dissipation_rate=rate)


def test_sigma():
    assert sigma(0.0) == 0.0
    assert sigma(0.25) == 0.25
    assert sigma(3.0) == 1.0


def test_shear_energy_closed_form(grid, gamma_laws):
    x, y = grid.coords
    amp, rho0 = 0.3, 1.2
    u = np.stack([amp * np.sin(y), np.zeros_like(x)])
    rho = np.full((grid.n, grid.n), rho0)
    report = classical_energy(grid, gamma_laws, u, rho)
    assert report.kinetic == pytest.approx(rho0 * amp**2 * grid.L**2 / 4)
    assert report.potential == pytest.approx(gamma_laws.potential_energy(rho0) * grid.L**2)
    # 2 mu |Du|^2 with Du_12 = amp cos(y) / 2
    assert report.dissipation_rate == pytest.approx(amp**2 * grid.L**2 / 2)
    assert report.energy == pytest.approx(report.kinetic + report.potential)


def test_energy_of_rest_state_is_zero(grid, gamma_laws):
    report = classical_energy(grid, gamma_laws, np.zeros((2, grid.n, grid.n)), np.ones((grid.n, grid.n)))
    assert report.energy == 0.0
    assert report.dissipation_rate == 0.0


def test_pressure_damping_vanishes_at_reference(grid, gamma_laws):
    rest = pressure_damping(grid, gamma_laws, np.ones((grid.n, grid.n)), 2.0)
    assert rest.potential == 0.0
    assert rest.damping == 0.0
    disturbed = pressure_damping(grid, gamma_laws, np.full((grid.n, grid.n), 1.1), 2.0)
    dp = 1.1**1.4 - 1.0
    assert disturbed.damping == pytest.approx(grid.L**2 * dp**3 / 2.5)
    assert disturbed.exponent == 2.0


def test_ledger_balances_linear_decay():
    ledger = EnergyLedger()
    assert ledger.residual == 0.0
    for t in np.linspace(0.0, 1.0, 11):
        ledger.update(t, _report(2.0 - t, 1.0))
    assert ledger.initial == 2.0
    assert ledger.dissipated == pytest.approx(1.0)
    assert abs(ledger.residual) < 1e-12
    assert ledger.relative_residual < 1e-12


def test_ledger_flags_energy_creation():
    ledger = EnergyLedger()
    ledger.update(0.0, _report(1.0, 0.0))
    ledger.update(1.0, _report(1.5, 0.0))
    assert ledger.residual == pytest.approx(0.5)
    assert ledger.relative_residual == pytest.approx(0.5)


def test_hoff_functionals_with_constant_inputs():
    acc = hoff_functionals((t, 1.0, 1.0, 1.0, 1.0) for t in (0.0, 0.5, 1.0, 1.5, 2.0))
    a1, a2, a3 = acc.values
    assert a1 == pytest.approx(1.0 + 2.0)
    assert a2 == pytest.approx(1.0 + 1.5)
    assert a3 == pytest.approx(1.0 + 1.375)


def test_hoff_functionals_are_monotone():
    acc = HoffFunctionals()
    previous = (0.0, 0.0, 0.0)
    rng = np.random.default_rng(3)
    for t in np.linspace(0.0, 3.0, 31):
        acc.update(t, *rng.uniform(0.0, 2.0, 4))
        current = acc.values
        assert all(c >= p for c, p in zip(current, previous))
        previous = current


def test_hoff_functionals_defer_missing_terms():
    acc = HoffFunctionals()
    acc.update(0.0, grad_u_sq=2.0)
    acc.update(1.0, grad_u_sq=1.0)
    assert acc.values == (2.0, 0.0, 0.0)
    acc.update(1.0, rho_udot_sq=3.0)
    acc.update(2.0, rho_udot_sq=1.0)
    assert acc.a1.integral == pytest.approx(2.0)
    assert acc.a2.sup == pytest.approx(3.0)


def test_theta_functional_skips_invalid_estimates():
    theta = ThetaFunctional(alpha=0.5)
    theta.update(0.0, 1.0, 0.0)
    theta.update(1.0, None, 1.0)
    theta.update(2.0, math.nan, 1.0)
    assert theta.invalid == 2
    assert theta.value == pytest.approx(1.0)
    theta.update(1.0, 1.0, 1.0)
    # sup 1 plus the trapezoid of (1) and (1 + sigma(1)^2 * 1)
    assert theta.value == pytest.approx(1.0 + 0.5 * (1.0 + 2.0))


def test_theta_functional_fold():
    acc = theta_functional([(0.0, 0.5, 0.0), (0.5, 1.0, 1.0)], alpha=0.25)
    assert acc.r_alpha == 1.5
    assert acc.value == pytest.approx(1.0 + 0.25 * (0.0625 + 1.0 + 0.5**1.5))
