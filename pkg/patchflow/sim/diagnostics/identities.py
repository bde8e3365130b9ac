"""Grid-level identities: flux and vorticity representations, the second Hoff
energy identity and the Lagrangian mass cross-check."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import spatial

from ..constitutive import ConstitutiveLaws
from ..interface import InterfaceCurve
from ..spectral import SpectralGrid
from ..state import FluidState, material_derivative

logger = logging.getLogger(__name__)

_FLOOR = 1e-12


@dataclass(frozen=True)
class Snapshot:
    """Velocity and grid density at one instant; ``force`` is the body force or None."""

    t: float
    u: np.ndarray
    rho: np.ndarray
    force: np.ndarray | None = None


def _ratio(num: float, den: float) -> float:
    if den <= _FLOOR:
        return num
    return num / den


def band_mask(grid: SpectralGrid, curve: InterfaceCurve | None, width: float) -> np.ndarray:
    """Return True at grid nodes farther than ``width`` from every marker."""
    if curve is None or width <= 0:
        return np.ones((grid.n, grid.n), dtype=bool)
    markers = np.mod(curve.points, grid.L)
    markers = np.where(markers >= grid.L, 0.0, markers)
    tree = spatial.cKDTree(markers, boxsize=grid.L)
    dist = tree.query(grid.points, k=1)[0]
    return (dist > width).reshape(grid.n, grid.n)


def masked_relative_l2(
    grid: SpectralGrid, a: np.ndarray, b: np.ndarray, mask: np.ndarray, scale: np.ndarray | None = None
) -> float:
    """Relative L2 distance of the mean-removed fields over ``mask``.

    The denominator is the larger of |a| and |scale| on the mask, so an
    identity whose sides both vanish is measured against ``scale``.
    """
    a = a - a.mean()
    b = b - b.mean()
    num = float(np.sqrt(np.sum(((a - b) ** 2)[mask]) * grid.cell_area))
    den = float(np.sqrt(np.sum((a**2)[mask]) * grid.cell_area))
    if scale is not None:
        den = max(den, float(np.sqrt(np.sum((scale**2)[mask]) * grid.cell_area)))
    return _ratio(num, den)


def _viscous_scale(grid: SpectralGrid, laws: ConstitutiveLaws, u: np.ndarray, rho: np.ndarray) -> np.ndarray:
    du = grid.sym_grad(u)
    return 2.0 * laws.mu(rho) * np.sqrt(np.sum(du * du, axis=(0, 1)))


@dataclass(frozen=True)
class RepresentationReport:
    direct: np.ndarray
    representation: np.ndarray
    residual: float


def effective_flux(
    grid: SpectralGrid,
    laws: ConstitutiveLaws,
    u: np.ndarray,
    rho: np.ndarray,
    udot: np.ndarray,
    *,
    mu_s: float | None = None,
    force: np.ndarray | None = None,
    curve: InterfaceCurve | None = None,
    band: float = 0.0,
    dealias: bool = True,
) -> RepresentationReport:
    """Compare F = (2 mu + lam) div u - (P - P_ref) with -(-Lap)^-1 div(rho udot - G) + [K, mu - mu_s] Du."""
    mu_s = laws.mu_ref if mu_s is None else mu_s
    div = grid.divergence(u)
    direct = laws.stiffness(rho) * div - (laws.P(rho) - laws.P_ref)
    inertia = grid.product(rho[None], udot, dealias)
    if force is not None:
        inertia = inertia - force
    rep = -grid.inv_laplacian(grid.divergence(inertia))
    rep = rep + grid.commutator_K(laws.mu(rho) - mu_s, grid.sym_grad(u), "K", dealias)
    mask = band_mask(grid, curve, band)
    residual = masked_relative_l2(grid, direct, rep, mask, _viscous_scale(grid, laws, u, rho))
    return RepresentationReport(direct=direct, representation=rep, residual=residual)


def vorticity_identity(
    grid: SpectralGrid,
    laws: ConstitutiveLaws,
    u: np.ndarray,
    rho: np.ndarray,
    udot: np.ndarray,
    *,
    mu_s: float | None = None,
    force: np.ndarray | None = None,
    curve: InterfaceCurve | None = None,
    band: float = 0.0,
    dealias: bool = True,
) -> RepresentationReport:
    """Compare mu rot u with -(-Lap)^-1 rot(rho udot - G) + [K', mu - mu_s] Du."""
    mu_s = laws.mu_ref if mu_s is None else mu_s
    direct = laws.mu(rho) * grid.rot2(u)
    inertia = grid.product(rho[None], udot, dealias)
    if force is not None:
        inertia = inertia - force
    rep = -grid.inv_laplacian(grid.rot2(inertia))
    rep = rep + grid.commutator_K(laws.mu(rho) - mu_s, grid.sym_grad(u), "Kp", dealias)
    mask = band_mask(grid, curve, band)
    residual = masked_relative_l2(grid, direct, rep, mask, _viscous_scale(grid, laws, u, rho))
    return RepresentationReport(direct=direct, representation=rep, residual=residual)


# -- second Hoff identity -----------------------------------------------------


@dataclass(frozen=True)
class Hoff2Report:
    t: float
    lhs: float
    rhs: float
    terms: dict[str, float]
    residual: float


def stress(grid: SpectralGrid, laws: ConstitutiveLaws, u: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Return Pi = 2 mu Du + (lam div u - P + P_ref) I."""
    du = grid.sym_grad(u)
    div = du[0, 0] + du[1, 1]
    pi = 2.0 * laws.mu(rho)[None, None] * du
    iso = laws.lam(rho) * div - (laws.P(rho) - laws.P_ref)
    pi[0, 0] += iso
    pi[1, 1] += iso
    return pi


def hoff2_identity(
    grid: SpectralGrid,
    laws: ConstitutiveLaws,
    window: list[Snapshot],
    dealias: bool = True,
) -> Hoff2Report:
    """Evaluate d/dt (1/2) int rho |udot|^2 + int (2 mu |D udot|^2 + lam (div udot)^2) against its right side.

    ``window`` holds five consecutive snapshots; the identity is evaluated at
    the middle one.
    """
    if len(window) != 5:
        raise ValueError(f"hoff2 identity needs 5 snapshots, got {len(window)}")
    times = [s.t for s in window]

    def udot_at(i: int) -> np.ndarray:
        d = material_derivative(
            grid,
            window[i - 1].u,
            window[i].u,
            window[i + 1].u,
            times[i] - times[i - 1],
            window[i].u,
            dt_next=times[i + 1] - times[i],
            dealias=dealias,
        ).value
        return d

    udots = {i: udot_at(i) for i in (1, 2, 3)}
    kin = {i: 0.5 * grid.integrate(window[i].rho * np.sum(udots[i] ** 2, axis=0)) for i in (1, 3)}
    dkdt = (kin[3] - kin[1]) / (times[3] - times[1])

    mid = window[2]
    u, rho, ud = mid.u, mid.rho, udots[2]
    gd = grid.grad_vector(ud)
    g = grid.grad_vector(u)
    dud = 0.5 * (gd + gd.transpose(1, 0, 2, 3))
    div_ud = gd[0, 0] + gd[1, 1]
    du = 0.5 * (g + g.transpose(1, 0, 2, 3))
    div = g[0, 0] + g[1, 1]
    mu, lam = laws.mu(rho), laws.lam(rho)
    gg = np.einsum("ij...,jk...->ik...", g, g)
    pi = stress(grid, laws, u, rho)

    lhs = dkdt + grid.integrate(2.0 * mu * np.sum(dud * dud, axis=(0, 1)) + lam * div_ud**2)
    terms = {
        "mu_trace": grid.integrate(mu * np.einsum("jk...,kj...->...", gd, gg)),
        "mu_contract": grid.integrate(mu * np.sum(gd * gg, axis=(0, 1))),
        "mu_prime": grid.integrate(2.0 * rho * laws.dmu(rho) * div * np.sum(gd * du, axis=(0, 1))),
        "lam_trace": grid.integrate(div_ud * lam * (gg[0, 0] + gg[1, 1])),
        "lam_pressure": grid.integrate(div_ud * (rho * laws.dlam(rho) * div**2 - rho * laws.dP(rho) * div)),
        "stress_div": -grid.integrate(np.sum(gd * pi, axis=(0, 1)) * div),
        "stress_grad": grid.integrate(np.sum(np.einsum("jl...,lk...->jk...", gd, g) * pi, axis=(0, 1))),
    }
    if mid.force is not None and window[1].force is not None and window[3].force is not None:
        dgdt = (window[3].force - window[1].force) / (times[3] - times[1])
        flux = mid.force[:, None] * u[None, :]
        terms["force"] = grid.integrate(np.sum(ud * (dgdt + grid.div_matrix(flux)), axis=0))
    rhs = float(sum(terms.values()))
    scale = max([abs(dkdt), abs(lhs - dkdt)] + [abs(v) for v in terms.values()])
    residual = _ratio(abs(lhs - rhs), scale)
    return Hoff2Report(t=mid.t, lhs=lhs, rhs=rhs, terms=terms, residual=residual)


# -- Lagrangian mass ---------------------------------------------------------------


def lagrangian_mass(state: FluidState) -> float:
    """Return max over particles of |f^-1(fval) J - rho0| / rho0."""
    p = state.particles
    rho = np.asarray(state.laws.f_inverse(p.fval))
    return float(np.max(np.abs(rho * p.jacobian - p.rho0) / p.rho0))
