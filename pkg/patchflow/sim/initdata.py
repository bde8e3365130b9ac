"""Initial data: the density patch, its curve and level set, the particle
lattice and the mollified elliptic solve for the initial velocity."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.sparse import linalg as sparse_linalg

from .constitutive import ConstitutiveLaws
from .diagnostics.identities import stress
from .diagnostics.monitors import interface_composite
from .errors import InterfaceError, SolveError
from .interface import (
    INSIDE,
    OUTSIDE,
    InterfaceCurve,
    LevelSet,
    curve_norm,
    frak_P,
    geometry,
    holder_pw,
    jump_samples,
    levelset_metrics,
)
from .solver import build_force
from .spectral import SpectralGrid
from .state import FluidState, ParticleCloud, density_on_grid
from .utils import GaussianTerm, PatchConfig, ProfileConfig, ScenarioConfig, VelocityConfig

logger = logging.getLogger(__name__)

STAGNATION_WINDOW = 200
_DENSE_FACTOR = 16


class DensityPatch:
    """Star-shaped patch D = {phi0 > 0} with phi0 = 1 - (r / R(theta))^2 and its density profiles."""

    def __init__(self, cfg: PatchConfig, L: float, rho_ref: float):
        self.cfg = cfg
        self.L = L
        self.rho_ref = rho_ref
        self.center = np.asarray(cfg.center if cfg.center is not None else (L / 2.0, L / 2.0), dtype=float)
        self.alpha = cfg.alpha
        self.fade = L / 4.0
        if cfg.shape == "star":
            total = sum(abs(h.amplitude) for h in cfg.harmonics)
            if total >= 1.0:
                raise InterfaceError(f"star harmonics sum to {total:g}; the radius would vanish")

    def radius(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        cfg = self.cfg
        if cfg.shape == "circle":
            return np.full_like(theta, cfg.radius)
        if cfg.shape == "ellipse":
            a, b = cfg.semi_axes
            return a * b / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)
        wobble = sum(h.amplitude * np.cos(h.mode * theta + h.phase) for h in cfg.harmonics)
        return cfg.radius * (1.0 + wobble)

    def _polar(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = np.asarray(points, dtype=float) - self.center
        d -= self.L * np.round(d / self.L)
        return np.hypot(d[..., 0], d[..., 1]), np.arctan2(d[..., 1], d[..., 0])

    def phi(self, points: np.ndarray) -> np.ndarray:
        r, theta = self._polar(points)
        return 1.0 - (r / self.radius(theta)) ** 2

    def boundary_point(self, theta: float) -> np.ndarray:
        return self.center + float(self.radius(np.asarray(theta))) * np.array([math.cos(theta), math.sin(theta)])

    def _profile(self, points: np.ndarray, prof: ProfileConfig) -> np.ndarray:
        base = prof.base if prof.base is not None else self.rho_ref
        if prof.cusp == 0.0:
            return np.full(points.shape[:-1], base)
        anchor = self.boundary_point(prof.anchor_angle)
        d = points - anchor
        d -= self.L * np.round(d / self.L)
        return base + prof.cusp * np.linalg.norm(d, axis=-1) ** self.alpha

    def density(self, points: np.ndarray, side=None) -> np.ndarray:
        """Return rho0 at ``points``; ``side`` forces the inside or outside profile."""
        points = np.asarray(points, dtype=float)
        r, theta = self._polar(points)
        if side is None:
            inside = self.phi(points) > 0
        else:
            inside = np.full(points.shape[:-1], side == "inside")
        rho_in = self._profile(points, self.cfg.inside)
        excess = self._profile(points, self.cfg.outside) - self.rho_ref
        beyond = np.clip((r - self.radius(theta)) / self.fade, 0.0, 1.0)
        rho_out = self.rho_ref + excess * 0.5 * (1.0 + np.cos(math.pi * beyond))
        return np.where(inside, rho_in, rho_out)

    def classify(self, points: np.ndarray, h: float) -> np.ndarray:
        """Label points +1 inside, -1 outside, 0 within about h of the boundary."""
        r, theta = self._polar(points)
        gap = np.abs(r - self.radius(theta))
        labels = np.where(self.phi(points) > 0, INSIDE, OUTSIDE)
        return np.where(gap < h, 0, labels).astype(np.int8)

    def curve(self, markers: int) -> InterfaceCurve:
        """Return ``markers`` points on the boundary, uniform in arclength, counter-clockwise."""
        theta = np.linspace(0.0, 2.0 * math.pi, _DENSE_FACTOR * markers, endpoint=False)
        dense = self.center + self.radius(theta)[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        closed = np.vstack([dense, dense[:1]])
        cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(closed, axis=0), axis=1))])
        targets = np.linspace(0.0, cum[-1], markers, endpoint=False)
        pts = np.stack([np.interp(targets, cum, closed[:, 0]), np.interp(targets, cum, closed[:, 1])], axis=1)
        return InterfaceCurve.from_points(pts)


# -- target velocity ----------------------------------------------------------------


def _gaussian(grid: SpectralGrid, term: GaussianTerm, default_center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center = np.asarray(term.center if term.center is not None else default_center, dtype=float)
    d = grid.coords - center[:, None, None]
    d -= grid.L * np.round(d / grid.L)
    g = term.amplitude * np.exp(-(d[0] ** 2 + d[1] ** 2) / term.width**2)
    return g, d


def target_velocity(grid: SpectralGrid, cfg: VelocityConfig, center: np.ndarray) -> np.ndarray:
    """Return u0 = grad^perp(sum of Gaussian streams) + grad(sum of Gaussian potentials)."""
    u = np.zeros((2, grid.n, grid.n))
    for term in cfg.vortices:
        psi, d = _gaussian(grid, term, center)
        scale = -2.0 / term.width**2
        u[0] += scale * d[1] * psi
        u[1] -= scale * d[0] * psi
    for term in cfg.potentials:
        pot, d = _gaussian(grid, term, center)
        scale = -2.0 / term.width**2
        u += scale * d * pot
    return u


# -- mollified elliptic solve ----------------------------------------------------------


def mollifier(grid: SpectralGrid, delta: float) -> np.ndarray:
    """Truncated Gaussian of support radius delta centred at the origin, unit integral on the grid."""
    x = grid.coords.copy()
    x -= grid.L * np.round(x / grid.L)
    r2 = x[0] ** 2 + x[1] ** 2
    sigma = delta / 3.0
    w = np.where(r2 < delta**2, np.exp(-r2 / (2.0 * sigma**2)), 0.0)
    return w / (w.sum() * grid.cell_area)


def mollify(grid: SpectralGrid, kernel: np.ndarray, f: np.ndarray) -> np.ndarray:
    return grid.to_physical(grid.to_fourier(f) * grid.to_fourier(kernel)) * grid.cell_area


@dataclass(frozen=True)
class InitialVelocity:
    u: np.ndarray
    c_delta: float
    iterations: int
    residual: float
    bound_ratio: float
    compatibility_l2: float
    stress_l2: float
    pressure_l2: float


def _elliptic_operator(grid: SpectralGrid, mu: np.ndarray, lam: np.ndarray, c: float):
    n = grid.n

    def apply(flat: np.ndarray) -> np.ndarray:
        u = flat.reshape(2, n, n)
        du = grid.sym_grad(u)
        div = du[0, 0] + du[1, 1]
        s = 2.0 * mu[None, None] * du
        s[0, 0] += lam * div
        s[1, 1] += lam * div
        return (-grid.div_matrix(s) + c * u).ravel()

    return apply


def _preconditioner(grid: SpectralGrid, mu_c: float, lam_c: float, c: float):
    n = grid.n
    k = grid.k
    a = mu_c * grid.k2 + c
    b = mu_c + lam_c
    safe_a = np.where(a > 0, a, 1.0)

    def apply(flat: np.ndarray) -> np.ndarray:
        r_hat = grid.to_fourier(flat.reshape(2, n, n))
        kdotr = k[0] * r_hat[0] + k[1] * r_hat[1]
        z = (r_hat - b * k * kdotr / (safe_a + b * grid.k2)) / safe_a
        z[:, a <= 0] = 0.0
        return grid.to_physical(z).ravel()

    return apply


def solve_initial_velocity(
    grid: SpectralGrid,
    laws: ConstitutiveLaws,
    rho0: np.ndarray,
    u0: np.ndarray,
    delta: float,
    *,
    tol: float = 1e-8,
    maxiter: int = 2000,
) -> InitialVelocity:
    """Solve -div(2 mu Du + lam div u I) + c u = -div(w * Pi0) - grad(P - P_ref).

    ``c`` is |w * Pi0 - Pi0|_{L2}; the solve is preconditioned CG with the
    constant-coefficient inverse at (mu_ref, lam_ref, c).
    """
    started = time.perf_counter()
    n = grid.n
    mu, lam = laws.mu(rho0), laws.lam(rho0)
    pressure = laws.P(rho0) - laws.P_ref
    pi0 = stress(grid, laws, u0, rho0)
    kernel = mollifier(grid, delta)
    pi_delta = mollify(grid, kernel, pi0)
    c_delta = grid.l2_norm(pi_delta - pi0)
    rhs = (-grid.div_matrix(pi_delta) - grid.gradient(pressure)).ravel()
    stress_l2, pressure_l2 = grid.l2_norm(pi0), grid.l2_norm(pressure)

    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        logger.info("Initial velocity: zero right-hand side, u0_delta = 0")
        return InitialVelocity(
            u=np.zeros((2, n, n)),
            c_delta=c_delta,
            iterations=0,
            residual=0.0,
            bound_ratio=0.0,
            compatibility_l2=0.0,
            stress_l2=stress_l2,
            pressure_l2=pressure_l2,
        )

    apply = _elliptic_operator(grid, mu, lam, c_delta)
    size = 2 * n * n
    op = sparse_linalg.LinearOperator((size, size), matvec=apply, dtype=float)
    precond = sparse_linalg.LinearOperator(
        (size, size), matvec=_preconditioner(grid, laws.mu_ref, laws.lam_ref, c_delta), dtype=float
    )
    progress = {"iterations": 0, "checkpoint": rhs_norm}

    def monitor(xk: np.ndarray) -> None:
        progress["iterations"] += 1
        if progress["iterations"] % STAGNATION_WINDOW == 0:
            res = float(np.linalg.norm(rhs - apply(xk)))
            if res > progress["checkpoint"] / 10.0:
                raise SolveError(
                    f"CG stagnated: residual {res / rhs_norm:.3e} after {progress['iterations']} iterations",
                    {"iterations": progress["iterations"], "relative_residual": res / rhs_norm, "c_delta": c_delta},
                )
            progress["checkpoint"] = res

    # converge past tol so the recomputed residual is below it
    x, info = sparse_linalg.cg(op, rhs, rtol=tol / 10.0, atol=0.0, maxiter=maxiter, M=precond, callback=monitor)
    residual = float(np.linalg.norm(rhs - apply(x))) / rhs_norm
    if info != 0 or residual >= tol:
        raise SolveError(
            f"CG did not converge: info={info} relative residual {residual:.3e}",
            {"iterations": progress["iterations"], "relative_residual": residual, "c_delta": c_delta},
        )
    u = x.reshape(2, n, n)
    grad_sq = grid.l2_norm(grid.grad_vector(u)) ** 2
    denom = stress_l2**2 + pressure_l2**2
    compat = grid.l2_norm(grid.div_matrix(stress(grid, laws, u, rho0)))
    logger.info(
        "Initial velocity solved iterations=%d residual=%.3e c_delta=%.4g elapsed_ms=%.1f",
        progress["iterations"],
        residual,
        c_delta,
        (time.perf_counter() - started) * 1000.0,
    )
    return InitialVelocity(
        u=u,
        c_delta=c_delta,
        iterations=progress["iterations"],
        residual=residual,
        bound_ratio=grad_sq / denom if denom > 0 else 0.0,
        compatibility_l2=compat,
        stress_l2=stress_l2,
        pressure_l2=pressure_l2,
    )


# -- assembly --------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialData:
    state: FluidState
    patch: DensityPatch
    velocity: InitialVelocity | None
    target: np.ndarray


def seed_particles(grid: SpectralGrid, patch: DensityPatch, laws: ConstitutiveLaws, factor: int) -> ParticleCloud:
    """Lay particles on a lattice ``factor`` times finer than the grid, at cell centres."""
    hp = grid.h / factor
    x = (np.arange(grid.n * factor) + 0.5) * hp
    pts = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
    inside = patch.phi(pts) > 0
    rho0 = patch.density(pts, None)
    return ParticleCloud(
        labels=pts.copy(),
        x=pts,
        fval=np.asarray(laws.f_of_rho(rho0), dtype=float),
        inside=inside,
        log_j=np.zeros(len(pts)),
        rho0=rho0,
        volume=hp * hp,
    )


def build_laws(cfg: ScenarioConfig, patch: DensityPatch, grid: SpectralGrid) -> ConstitutiveLaws:
    sample = patch.density(grid.points)
    return ConstitutiveLaws.from_preset(cfg.laws, density_range=(float(sample.min()), float(sample.max())))


def build_initial_state(cfg: ScenarioConfig) -> InitialData:
    """Assemble the full initial state for a scenario."""
    grid = SpectralGrid(cfg.grid.n, cfg.grid.length)
    patch = DensityPatch(cfg.patch, grid.L, cfg.laws.rho_ref)
    laws = build_laws(cfg, patch, grid)
    particles = seed_particles(grid, patch, laws, cfg.grid.lattice_factor)
    curve = patch.curve(cfg.grid.markers)
    levelset = LevelSet(grid, patch.phi(grid.coords.transpose(1, 2, 0)))
    rho = density_on_grid(particles, levelset, laws)

    force = build_force(grid, laws, cfg.step.force)
    target = force.velocity(0.0) if force is not None else target_velocity(grid, cfg.velocity, patch.center)
    velocity = None
    if force is not None or cfg.velocity.mode == "target":
        u = target
    else:
        velocity = solve_initial_velocity(
            grid,
            laws,
            rho,
            target,
            cfg.velocity.delta,
            tol=cfg.velocity.cg_tol,
            maxiter=cfg.velocity.cg_maxiter,
        )
        u = velocity.u
    state = FluidState(
        t=0.0,
        step=0,
        grid=grid,
        laws=laws,
        u=u,
        particles=particles,
        curve=curve,
        levelset=levelset,
        rho=rho,
    )
    logger.info(
        "Initial state built scenario=%s n=%d particles=%d markers=%d laws=%s",
        cfg.name,
        grid.n,
        particles.size,
        curve.size,
        laws.name,
    )
    return InitialData(state=state, patch=patch, velocity=velocity, target=target)


# -- smallness -----------------------------------------------------------------------------


def smallness_report(initial: InitialData, cfg: ScenarioConfig, rng: np.random.Generator | None = None) -> dict:
    """Return c0 and the interface composite for the initial state, term by term."""
    rng = rng if rng is not None else np.random.default_rng(cfg.run.seed)
    state, patch = initial.state, initial.patch
    grid, laws = state.grid, state.laws
    alpha = cfg.alpha
    h = grid.h
    budget = cfg.probes.pair_budget

    def deviation(points, side=None):
        return patch.density(points, side) - laws.rho_ref

    def classify(points):
        return patch.classify(points, h)

    rho_grid = patch.density(grid.coords.transpose(1, 2, 0))
    u_h1_sq = grid.h1_norm(state.u) ** 2
    rho_l2_sq = grid.l2_norm(rho_grid - laws.rho_ref) ** 2
    cutoff = max(0.1 * grid.L, 4.0 * h)
    semis = {
        side: holder_pw(
            deviation, L=grid.L, h=h, alpha=alpha, cutoff=cutoff, side=side, classify=classify, budget=budget, rng=rng
        )
        for side in ("inside", "outside")
    }
    rho_holder = max(est.value for est in semis.values())
    rho_pw = float(np.max(np.abs(rho_grid - laws.rho_ref))) + rho_holder

    r0 = cfg.probes.radius_cells * h
    jumps = jump_samples(patch.density, state.curve, r0, h=h, classify=classify, exponent=cfg.probes.exponent, field="rho")
    valid = jumps.valid
    jump_vals = np.where(valid, jumps.jump, 0.0)
    weights = state.curve.arc_weights
    jump_l4 = curve_norm(jump_vals, weights, 4.0)
    jump_inf = curve_norm(jump_vals, weights, math.inf)
    c0 = u_h1_sq + rho_l2_sq + rho_pw**2 + (jump_l4 + jump_inf) ** 2

    geom = geometry(state.curve, alpha)
    fp = frak_P(geom)
    metrics = levelset_metrics(state.levelset, state.curve, alpha, rng=rng, budget=budget)
    composite = interface_composite(laws, fp, metrics.ell, alpha, jumps.plus[valid], jumps.minus[valid])
    mu_jump = np.abs(laws.mu(jumps.plus[valid]) - laws.mu(jumps.minus[valid]))
    report = {
        "c0": c0,
        "terms": {
            "u_h1_sq": u_h1_sq,
            "rho_l2_sq": rho_l2_sq,
            "rho_pw_sq": rho_pw**2,
            "rho_holder": rho_holder,
            "rho_jump_l4": jump_l4,
            "rho_jump_inf": jump_inf,
        },
        "composite": composite,
        "frak_p": fp,
        "ell_phi": metrics.ell,
        "mu_jump_inf": float(mu_jump.max()) if mu_jump.size else 0.0,
        "valid_markers": int(valid.sum()),
        "pairs_used": {side: est.pairs_used for side, est in semis.items()},
        "pair_budget": budget,
    }
    if initial.velocity is not None:
        v = initial.velocity
        report["initial_velocity"] = {
            "c_delta": v.c_delta,
            "iterations": v.iterations,
            "residual": v.residual,
            "bound_ratio": v.bound_ratio,
            "compatibility_l2": v.compatibility_l2,
        }
    return report
