"""Classical energy balance and the running time-weighted functionals."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..constitutive import ConstitutiveLaws
from ..spectral import SpectralGrid

logger = logging.getLogger(__name__)


def sigma(t: float) -> float:
    """Return the time weight min(1, t)."""
    return min(1.0, t)


@dataclass(frozen=True)
class EnergyReport:
    energy: float
    kinetic: float
    potential: float
    dissipation_rate: float


def dissipation_rate(grid: SpectralGrid, laws: ConstitutiveLaws, u: np.ndarray, rho: np.ndarray) -> float:
    """Return int 2 mu |Du|^2 + lambda (div u)^2."""
    du = grid.sym_grad(u)
    div = du[0, 0] + du[1, 1]
    density = 2.0 * laws.mu(rho) * np.sum(du * du, axis=(0, 1)) + laws.lam(rho) * div**2
    return grid.integrate(density)


def classical_energy(grid: SpectralGrid, laws: ConstitutiveLaws, u: np.ndarray, rho: np.ndarray) -> EnergyReport:
    """Return E = int rho |u|^2 / 2 + H_1(rho) and the dissipation rate."""
    kinetic = 0.5 * grid.integrate(rho * np.sum(u * u, axis=0))
    potential = grid.integrate(laws.potential_energy(rho, 1.0))
    return EnergyReport(
        energy=kinetic + potential,
        kinetic=kinetic,
        potential=potential,
        dissipation_rate=dissipation_rate(grid, laws, u, rho),
    )


@dataclass(frozen=True)
class PressureDamping:
    exponent: float
    potential: float
    damping: float


def pressure_damping(grid: SpectralGrid, laws: ConstitutiveLaws, rho: np.ndarray, l_exp: float) -> PressureDamping:
    """Return int H_l(rho) and the damping int |P - P_ref|^(l+1) / (2 mu + lambda)."""
    dp = np.abs(laws.P(rho) - laws.P_ref)
    return PressureDamping(
        exponent=l_exp,
        potential=grid.integrate(laws.potential_energy(rho, l_exp)),
        damping=grid.integrate(dp ** (l_exp + 1.0) / laws.stiffness(rho)),
    )


class EnergyLedger:
    """Tracks E(t) + int_0^t dissipation - E(0) with trapezoid quadrature."""

    def __init__(self):
        self.initial: float | None = None
        self.dissipated = 0.0
        self._last: tuple[float, float] | None = None
        self.energy = 0.0

    def update(self, t: float, report: EnergyReport) -> float:
        if self.initial is None:
            self.initial = report.energy
        if self._last is not None:
            t0, d0 = self._last
            self.dissipated += 0.5 * (t - t0) * (d0 + report.dissipation_rate)
        self._last = (t, report.dissipation_rate)
        self.energy = report.energy
        return self.residual

    @property
    def residual(self) -> float:
        if self.initial is None:
            return 0.0
        return self.energy + self.dissipated - self.initial

    @property
    def relative_residual(self) -> float:
        if not self.initial:
            return abs(self.residual)
        return abs(self.residual) / abs(self.initial)


@dataclass
class _Series:
    """Running sup of one term plus the trapezoid integral of another."""

    sup: float = 0.0
    integral: float = 0.0
    last: tuple[float, float] | None = None

    def add(self, t: float, sup_term: float | None, int_term: float | None) -> None:
        if sup_term is not None:
            self.sup = max(self.sup, sup_term)
        if int_term is not None:
            if self.last is not None and t > self.last[0]:
                self.integral += 0.5 * (t - self.last[0]) * (self.last[1] + int_term)
            self.last = (t, int_term)

    @property
    def value(self) -> float:
        return self.sup + self.integral


@dataclass
class HoffFunctionals:
    """A1, A2, A3 with sigma weights; a None input defers that term to a later call."""

    a1: _Series = field(default_factory=_Series)
    a2: _Series = field(default_factory=_Series)
    a3: _Series = field(default_factory=_Series)

    def update(
        self,
        t: float,
        grad_u_sq: float | None = None,
        rho_udot_sq: float | None = None,
        grad_udot_sq: float | None = None,
        rho_uddot_sq: float | None = None,
    ) -> None:
        s = sigma(t)
        self.a1.add(t, grad_u_sq, rho_udot_sq)
        self.a2.add(
            t,
            None if rho_udot_sq is None else s * rho_udot_sq,
            None if grad_udot_sq is None else s * grad_udot_sq,
        )
        self.a3.add(
            t,
            None if grad_udot_sq is None else s * s * grad_udot_sq,
            None if rho_uddot_sq is None else s * s * rho_uddot_sq,
        )

    @property
    def values(self) -> tuple[float, float, float]:
        return self.a1.value, self.a2.value, self.a3.value


def hoff_functionals(history) -> HoffFunctionals:
    """Fold an iterable of (t, |grad u|^2, |sqrt(rho) udot|^2, |grad udot|^2, |sqrt(rho) uddot|^2)."""
    acc = HoffFunctionals()
    for row in history:
        acc.update(*row)
    return acc


class ThetaFunctional:
    """sup |f(rho)|^4 + int (|f(rho)|^4 + sigma^(1+2 alpha) |grad u|^4) over piecewise Hoelder norms."""

    def __init__(self, alpha: float):
        self.alpha = alpha
        self.r_alpha = 1.0 + 2.0 * alpha
        self._series = _Series()
        self.invalid = 0

    def update(self, t: float, f_norm: float | None, grad_norm: float | None) -> float:
        if f_norm is None or grad_norm is None or not (math.isfinite(f_norm) and math.isfinite(grad_norm)):
            self.invalid += 1
            logger.debug("Theta update skipped at t=%.6g (estimator invalid)", t)
            return self.value
        f4 = f_norm**4
        self._series.add(t, f4, f4 + sigma(t) ** self.r_alpha * grad_norm**4)
        return self.value

    @property
    def value(self) -> float:
        return self._series.value


def theta_functional(history, alpha: float) -> ThetaFunctional:
    acc = ThetaFunctional(alpha)
    for t, f_norm, grad_norm in history:
        acc.update(t, f_norm, grad_norm)
    return acc
