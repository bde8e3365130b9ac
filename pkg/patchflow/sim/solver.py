"""Time stepping: Lagrangian f-value ODE, interface transport and the
semi-implicit spectral momentum step."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .constitutive import ConstitutiveLaws
from .errors import BlowupError, InvalidStateError, LawError
from .interface import advect_levelset, advect_markers
from .spectral import SpectralGrid
from .state import FlowSampler, FluidState, ParticleCloud, density_on_grid, jacobian_update
from .utils import ForceConfig, StepConfig

logger = logging.getLogger(__name__)

Flux = Callable[[np.ndarray, np.ndarray, np.ndarray, float], np.ndarray]


# -- forcing ---------------------------------------------------------------------


class ManufacturedShear:
    """Divergence-free shear with a body force that makes it an exact solution.

    u = (A cos t sin(k x2), A sin t sin(k x1)) at constant density rho_ref and
    constant viscosity; the force is rho (d_t u + u . grad u) + mu k^2 u.
    """

    def __init__(self, grid: SpectralGrid, laws: ConstitutiveLaws, cfg: ForceConfig):
        self.grid = grid
        self.rho = laws.rho_ref
        self.mu = laws.mu_ref
        self.amplitude = cfg.amplitude
        self.k = 2.0 * math.pi * cfg.mode / grid.L

    def _parts(self, t: float):
        x1, x2 = self.grid.coords
        s1, s2 = np.sin(self.k * x1), np.sin(self.k * x2)
        c1, c2 = np.cos(self.k * x1), np.cos(self.k * x2)
        return s1, s2, c1, c2, self.amplitude * math.cos(t), self.amplitude * math.sin(t)

    def velocity(self, t: float) -> np.ndarray:
        s1, s2, _, _, a, b = self._parts(t)
        return np.stack([a * s2, b * s1])

    def material_derivative(self, t: float) -> np.ndarray:
        s1, s2, c1, c2, a, b = self._parts(t)
        da, db = -self.amplitude * math.sin(t), self.amplitude * math.cos(t)
        return np.stack([da * s2 + b * s1 * a * self.k * c2, db * s1 + a * s2 * b * self.k * c1])

    def __call__(self, t: float) -> np.ndarray:
        return self.rho * self.material_derivative(t) + self.mu * self.k**2 * self.velocity(t)


def build_force(grid: SpectralGrid, laws: ConstitutiveLaws, cfg: ForceConfig | None) -> ManufacturedShear | None:
    if cfg is None:
        return None
    if not laws.viscosity_constant:
        raise InvalidStateError("manufactured forcing requires constant viscosity laws")
    return ManufacturedShear(grid, laws, cfg)


# -- time step size ------------------------------------------------------------------


def split_viscosity(laws: ConstitutiveLaws, settings: StepConfig) -> tuple[float, float]:
    """Return (mu_s, nu_s): the implicit shear coefficient and mu_s + lambda(rho_ref)."""
    mu_s = settings.mu_split if settings.mu_split is not None else laws.mu_ref
    return mu_s, mu_s + laws.lam_ref


def cfl_dt(state: FluidState, settings: StepConfig) -> float:
    """Return dt from the advective and explicit-viscous-remainder bounds, capped at dt-max."""
    if not settings.adaptive:
        return float(settings.dt)
    grid, laws = state.grid, state.laws
    mu_s, _ = split_viscosity(laws, settings)
    umax = float(np.max(np.linalg.norm(state.u, axis=0)))
    remainder = float(np.max(2.0 * np.abs(laws.mu(state.rho) - mu_s) + np.abs(laws.lam(state.rho) - laws.lam_ref)))
    adv = grid.h / umax if umax > 0 else math.inf
    visc = float(np.min(state.rho)) * grid.h**2 / (2.0 * remainder) if remainder > 0 else math.inf
    return float(min(settings.dt_max, settings.cfl * min(adv, visc)))


# -- density ODE --------------------------------------------------------------------


def direct_flux(flow: FlowSampler, laws: ConstitutiveLaws) -> Flux:
    """F = (2 mu + lambda) div u - (P - P_ref) evaluated with the particle's own density."""

    def flux(points, fval, rho, theta):
        return laws.stiffness(rho) * flow.divergence(points, theta) - (laws.P(rho) - laws.P_ref)

    return flux


def zero_flux(points, fval, rho, theta):
    return np.zeros(len(points))


def _band_report(laws: ConstitutiveLaws, **values) -> dict:
    return {"band": [laws.a_lo, laws.a_hi], "f_range": [laws.f_lo, laws.f_hi], **values}


def f_value_step(
    particles: ParticleCloud,
    flux: Flux,
    laws: ConstitutiveLaws,
    dt: float,
    x_start: np.ndarray | None = None,
) -> ParticleCloud:
    """Midpoint RK2 on d fval/dt = -(P(f^-1(fval)) - P_ref) - F(x(t)).

    ``x_start`` are the positions at the start of the step; the flux is sampled
    at their midpoint with ``particles.x``.
    """
    x_end = particles.x
    x0 = x_end if x_start is None else x_start
    x_half = 0.5 * (x0 + x_end)

    def rhs(fval: np.ndarray, x: np.ndarray, theta: float) -> np.ndarray:
        rho = laws.f_inverse(fval)
        return -(laws.P(rho) - laws.P_ref) - flux(x, fval, rho, theta)

    try:
        k1 = rhs(particles.fval, x0, 0.0)
        k2 = rhs(particles.fval + 0.5 * dt * k1, x_half, 0.5)
    except LawError as e:
        raise BlowupError(f"f-value left the admissible range: {e}", _band_report(laws)) from e
    fval = particles.fval + dt * k2
    if not np.all(np.isfinite(fval)) or fval.min() < laws.f_lo or fval.max() > laws.f_hi:
        raise BlowupError(
            "f-value left the admissible range",
            _band_report(laws, fval_min=float(np.nanmin(fval)), fval_max=float(np.nanmax(fval))),
        )
    return ParticleCloud(
        labels=particles.labels,
        x=particles.x,
        fval=fval,
        inside=particles.inside,
        log_j=particles.log_j,
        rho0=particles.rho0,
        volume=particles.volume,
    )


# -- momentum ----------------------------------------------------------------------------


def explicit_terms(
    grid: SpectralGrid,
    laws: ConstitutiveLaws,
    u: np.ndarray,
    rho: np.ndarray,
    mu_s: float,
    dealias: bool = True,
) -> np.ndarray:
    """Return -rho u.grad u - grad(P - P_ref) + div(2(mu - mu_s) Du) + grad((lam - lam_ref) div u)."""
    grad = grid.grad_vector(u)
    adv = sum(grid.product(u[k][None], grad[:, k], dealias) for k in range(2))
    out = -grid.product(rho[None], adv, dealias)
    out -= grid.gradient(laws.P(rho) - laws.P_ref)
    du = 0.5 * (grad + grad.transpose(1, 0, 2, 3))
    out += grid.div_matrix(grid.product(2.0 * (laws.mu(rho) - mu_s)[None, None], du, dealias))
    out += grid.gradient(grid.product(laws.lam(rho) - laws.lam_ref, grid.divergence(u), dealias))
    return out


def _implicit_apply(grid: SpectralGrid, u_hat: np.ndarray, mu_s: float, nu_s: float) -> np.ndarray:
    k = grid.k_odd
    kdotu = k[0] * u_hat[0] + k[1] * u_hat[1]
    return -mu_s * grid.k2 * u_hat - nu_s * k * kdotu


def _implicit_solve(grid: SpectralGrid, rhs_hat: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    """Invert a I + b k k^T per mode by Sherman-Morrison."""
    k = grid.k_odd
    ko2 = k[0] ** 2 + k[1] ** 2
    kdotr = k[0] * rhs_hat[0] + k[1] * rhs_hat[1]
    return (rhs_hat - b * k * kdotr / (a + b * ko2)) / a


@dataclass(frozen=True)
class VelocityUpdate:
    u: np.ndarray
    explicit: np.ndarray


def velocity_step(
    state: FluidState,
    rho_next: np.ndarray,
    dt: float,
    settings: StepConfig,
    force: Callable[[float], np.ndarray] | None = None,
) -> VelocityUpdate:
    """Crank-Nicolson on mu_s Lap + nu_s grad div, AB2 on the remainder.

    The inertia is split as rho_bar d_t u + (rho - rho_bar) d_t u with
    rho_bar = max rho; the second part uses a lagged estimate of d_t u that
    is corrected once.
    """
    grid, laws = state.grid, state.laws
    mu_s, nu_s = split_viscosity(laws, settings)
    u = state.u
    explicit = explicit_terms(grid, laws, u, state.rho, mu_s, settings.dealias)
    if state.explicit_prev is not None and state.dt_prev:
        omega = dt / state.dt_prev
        extrapolated = (1.0 + 0.5 * omega) * explicit - 0.5 * omega * state.explicit_prev
    else:
        extrapolated = explicit
    rhs = extrapolated
    if force is not None:
        rhs = rhs + force(state.t + 0.5 * dt)

    rho_bar = float(max(np.max(rho_next), np.max(state.rho)))
    rho_half = 0.5 * (state.rho + rho_next)
    u_hat = grid.to_fourier(u)
    base_hat = rho_bar / dt * u_hat + 0.5 * _implicit_apply(grid, u_hat, mu_s, nu_s) + grid.to_fourier(rhs)
    a = rho_bar / dt + 0.5 * mu_s * grid.k2
    b = 0.5 * nu_s

    if state.u_prev is not None and state.dt_prev:
        guess = (u - state.u_prev) / state.dt_prev
    else:
        guess = np.zeros_like(u)
    u_next = u
    for _ in range(2):
        correction = grid.to_fourier((rho_bar - rho_half)[None] * guess)
        u_next = grid.to_physical(_implicit_solve(grid, base_hat + correction, a, b))
        guess = (u_next - u) / dt
    if not np.all(np.isfinite(u_next)):
        raise InvalidStateError(f"non-finite velocity at t={state.t:.6g}")
    return VelocityUpdate(u=u_next, explicit=explicit)


# -- orchestration ------------------------------------------------------------------------


@dataclass(frozen=True)
class StepReport:
    dt: float
    rho_min: float
    rho_max: float
    u_max: float
    markers: int


def full_step(
    state: FluidState,
    settings: StepConfig,
    force: Callable[[float], np.ndarray] | None = None,
    dt: float | None = None,
) -> tuple[FluidState, StepReport]:
    """Advance every component of ``state`` by one common dt.

    Order: particles and Jacobians, f-values (flux from the current velocity),
    interface and level set, density reconstruction, then velocity.
    """
    grid, laws = state.grid, state.laws
    if dt is None:
        dt = cfl_dt(state, settings)
    if not dt > 0:
        raise InvalidStateError(f"non-positive time step {dt}")
    ratio = dt / state.dt_prev if state.dt_prev else 0.0
    flow = FlowSampler(grid, state.u, state.u_prev, ratio)

    particles = jacobian_update(state.particles, flow, dt)
    flux = zero_flux if settings.flux == "zero" else direct_flux(flow, laws)
    particles = f_value_step(particles, flux, laws, dt, x_start=state.particles.x)

    if flow.is_zero:
        curve, levelset = state.curve, state.levelset
    else:
        curve = advect_markers(state.curve, flow.velocity, dt, h=grid.h, courant_limit=1.0)
        levelset = advect_levelset(state.levelset, flow.velocity, dt)

    try:
        rho = density_on_grid(particles, levelset, laws)
    except LawError as e:
        raise BlowupError(f"density reconstruction left the band at t={state.t + dt:.6g}: {e}", _band_report(laws)) from e
    rho_min, rho_max = float(rho.min()), float(rho.max())
    if rho_min < laws.a_lo or rho_max > laws.a_hi:
        raise BlowupError(
            f"density left the band at t={state.t + dt:.6g}",
            _band_report(laws, rho_min=rho_min, rho_max=rho_max),
        )

    if settings.frozen_velocity:
        update = VelocityUpdate(u=state.u, explicit=np.zeros_like(state.u))
    else:
        update = velocity_step(state, rho, dt, settings, force)

    new_state = FluidState(
        t=state.t + dt,
        step=state.step + 1,
        grid=grid,
        laws=laws,
        u=update.u,
        particles=particles,
        curve=curve,
        levelset=levelset,
        rho=rho,
        u_prev=state.u,
        dt_prev=dt,
        explicit_prev=update.explicit,
    )
    report = StepReport(
        dt=dt,
        rho_min=rho_min,
        rho_max=rho_max,
        u_max=float(np.max(np.linalg.norm(update.u, axis=0))),
        markers=curve.size,
    )
    logger.debug(
        "Step %d t=%.6g dt=%.3g rho=[%.6g, %.6g] umax=%.3g",
        new_state.step,
        new_state.t,
        dt,
        rho_min,
        rho_max,
        report.u_max,
    )
    return new_state, report
