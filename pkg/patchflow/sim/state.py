"""Simulation state: grid velocity, Lagrangian particle cloud, interface and the
grid density reconstructed from the particles."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import spatial

from .constitutive import ConstitutiveLaws
from .errors import InvalidStateError
from .interface import InterfaceCurve, LevelSet
from .spectral import Interpolant, SpectralGrid

logger = logging.getLogger(__name__)

MLS_NEIGHBOURS = 24
MLS_RADIUS_CELLS = 3.0
_MLS_COND_LIMIT = 1e8


@dataclass(frozen=True)
class ParticleCloud:
    """Lagrangian carriers of f(rho).

    ``x`` is never wrapped; ``inside`` is fixed at seeding.
    """

    labels: np.ndarray
    x: np.ndarray
    fval: np.ndarray
    inside: np.ndarray
    log_j: np.ndarray
    rho0: np.ndarray
    volume: float

    @property
    def size(self) -> int:
        return len(self.x)

    @property
    def jacobian(self) -> np.ndarray:
        return np.exp(self.log_j)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.rho0) * self.volume)

    def wrapped(self, length: float) -> np.ndarray:
        return np.mod(self.x, length)


@dataclass(frozen=True)
class FluidState:
    t: float
    step: int
    grid: SpectralGrid
    laws: ConstitutiveLaws
    u: np.ndarray
    particles: ParticleCloud
    curve: InterfaceCurve
    levelset: LevelSet
    rho: np.ndarray
    u_prev: np.ndarray | None = None
    dt_prev: float | None = None
    explicit_prev: np.ndarray | None = field(default=None, repr=False)

    def advanced(self, **changes) -> FluidState:
        return replace(self, **changes)

    @cached_property
    def reconstructor(self) -> DensityReconstructor:
        return DensityReconstructor(self.grid, self.particles, self.laws)


# -- density reconstruction ------------------------------------------------------


class DensityReconstructor:
    """Moving-least-squares fit of particle f-values, one KD-tree per side.

    Fits are linear in the displacement with Gaussian weights of width h and
    a hard cutoff at 3h; a stencil never mixes the two sides.
    """

    def __init__(self, grid: SpectralGrid, particles: ParticleCloud, laws: ConstitutiveLaws):
        self.grid = grid
        self.laws = laws
        self.radius = MLS_RADIUS_CELLS * grid.h
        pos = particles.wrapped(grid.L)
        pos = np.where(pos >= grid.L, 0.0, pos)
        self._sides = {}
        for inside in (True, False):
            sel = particles.inside == inside
            if np.any(sel):
                tree = spatial.cKDTree(pos[sel], boxsize=grid.L)
                self._sides[inside] = (tree, pos[sel], particles.fval[sel])

    def fit(self, points: np.ndarray, inside: np.ndarray) -> np.ndarray:
        """Return the fitted f-value at ``points`` using particles of the matching side."""
        points = np.asarray(points, dtype=float)
        inside = np.broadcast_to(np.asarray(inside, dtype=bool), points.shape[:1])
        out = np.empty(len(points))
        for flag in (True, False):
            sel = inside == flag
            if not np.any(sel):
                continue
            if flag not in self._sides:
                raise InvalidStateError(f"particle depletion: no {'inside' if flag else 'outside'} particles")
            out[sel] = self._fit_side(points[sel], *self._sides[flag])
        return out

    def _fit_side(self, pts: np.ndarray, tree: spatial.cKDTree, pos: np.ndarray, fval: np.ndarray) -> np.ndarray:
        L, h = self.grid.L, self.grid.h
        q = np.mod(pts, L)
        q = np.where(q >= L, 0.0, q)
        k = min(MLS_NEIGHBOURS, len(pos))
        dist, idx = tree.query(q, k=k, distance_upper_bound=self.radius)
        dist, idx = dist.reshape(len(q), k), idx.reshape(len(q), k)
        found = np.isfinite(dist)
        count = found.sum(axis=1)
        if np.any(count == 0):
            bad = q[np.argmax(count == 0)]
            raise InvalidStateError(
                f"particle depletion: empty same-side stencil at ({bad[0]:.4g}, {bad[1]:.4g})"
            )
        safe = np.where(found, idx, 0)
        w = np.where(found, np.exp(-((np.where(found, dist, 0.0) / h) ** 2)), 0.0)
        disp = pos[safe] - q[:, None, :]
        disp -= L * np.round(disp / L)
        basis = np.concatenate([np.ones(disp.shape[:2] + (1,)), disp / h], axis=2)
        vals = fval[safe]

        mean = np.sum(w * vals, axis=1) / np.sum(w, axis=1)
        gram = np.einsum("mk,mki,mkj->mij", w, basis, basis)
        rhs = np.einsum("mk,mki,mk->mi", w, basis, vals)
        usable = count >= 3
        if np.any(usable):
            cond = np.linalg.cond(gram[usable])
            ok = np.zeros(len(q), dtype=bool)
            ok[np.flatnonzero(usable)[cond < _MLS_COND_LIMIT]] = True
        else:
            ok = usable
        out = mean.copy()
        if np.any(ok):
            coef = np.linalg.solve(gram[ok], rhs[ok][..., None])[..., 0]
            out[ok] = coef[:, 0]
        fallback = int(np.sum(~ok))
        if fallback:
            logger.debug("MLS weighted-mean fallback points=%d", fallback)
        return out

    def density_at(self, points: np.ndarray, inside: np.ndarray) -> np.ndarray:
        return self.laws.f_inverse(self.fit(points, inside))


def density_on_grid(particles: ParticleCloud, levelset: LevelSet, laws: ConstitutiveLaws) -> np.ndarray:
    """Return rho on the grid, each node fitted from particles on its own side of phi."""
    grid = levelset.grid
    recon = DensityReconstructor(grid, particles, laws)
    rho = recon.density_at(grid.points, levelset.grid_inside().ravel())
    return np.asarray(rho).reshape(grid.n, grid.n)


# -- time derivatives -----------------------------------------------------------


@dataclass(frozen=True)
class MaterialDerivative:
    value: np.ndarray
    order: int


def material_derivative(
    grid: SpectralGrid,
    v_prev: np.ndarray | None,
    v_curr: np.ndarray,
    v_next: np.ndarray | None,
    dt: float,
    u: np.ndarray,
    *,
    dt_next: float | None = None,
    dealias: bool = True,
) -> MaterialDerivative:
    """Return d_t v + (u . grad) v at the middle snapshot.

    ``dt`` is the spacing before ``v_curr`` and ``dt_next`` the spacing after
    (defaults to ``dt``). With a snapshot missing the time difference is
    one-sided and ``order`` drops to 1. Applied to u itself this gives u-dot;
    applied to u-dot snapshots it gives u-double-dot.
    """
    a = float(dt)
    b = float(dt if dt_next is None else dt_next)
    if v_prev is not None and v_next is not None:
        dtv = (-b / (a * (a + b))) * v_prev + ((b - a) / (a * b)) * v_curr + (a / (b * (a + b))) * v_next
        order = 2
    elif v_next is not None:
        dtv = (v_next - v_curr) / b
        order = 1
    elif v_prev is not None:
        dtv = (v_curr - v_prev) / a
        order = 1
    else:
        raise InvalidStateError("material derivative needs at least two snapshots")
    grad = grid.grad_vector(v_curr)
    adv = sum(grid.product(u[k][None], grad[:, k], dealias) for k in range(2))
    return MaterialDerivative(value=dtv + adv, order=order)


# -- flow sampling and the Jacobian -------------------------------------------------


class FlowSampler:
    """Velocity and divergence at t_n + theta dt, linearly extrapolated in time.

    With ``u_prev`` the field at t_{n-1} and ``ratio`` = dt / dt_prev, values at
    theta are u^n + theta ratio (u^n - u^{n-1}); without history u^n is frozen.
    """

    def __init__(self, grid: SpectralGrid, u: np.ndarray, u_prev: np.ndarray | None = None, ratio: float = 0.0):
        self.grid = grid
        self.is_zero = not np.any(u) and (u_prev is None or not np.any(u_prev))
        self._slope = ratio if u_prev is not None else 0.0
        self._u = Interpolant(grid, u)
        self._div = Interpolant(grid, grid.divergence(u))
        if self._slope:
            self._du = Interpolant(grid, u - u_prev)
            self._ddiv = Interpolant(grid, grid.divergence(u - u_prev))

    def velocity(self, points: np.ndarray, theta: float = 0.0) -> np.ndarray:
        out = self._u(points)
        if self._slope and theta:
            out = out + theta * self._slope * self._du(points)
        return out

    __call__ = velocity

    def divergence(self, points: np.ndarray, theta: float = 0.0) -> np.ndarray:
        out = self._div(points)
        if self._slope and theta:
            out = out + theta * self._slope * self._ddiv(points)
        return out


def jacobian_update(particles: ParticleCloud, flow: FlowSampler, dt: float) -> ParticleCloud:
    """Advance positions and log J together by RK4 over one step."""
    if flow.is_zero:
        return particles

    def rhs(x: np.ndarray, theta: float) -> tuple[np.ndarray, np.ndarray]:
        return flow.velocity(x, theta), flow.divergence(x, theta)

    x0 = particles.x
    k1x, k1j = rhs(x0, 0.0)
    k2x, k2j = rhs(x0 + 0.5 * dt * k1x, 0.5)
    k3x, k3j = rhs(x0 + 0.5 * dt * k2x, 0.5)
    k4x, k4j = rhs(x0 + dt * k3x, 1.0)
    x1 = x0 + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    log_j = particles.log_j + dt / 6.0 * (k1j + 2 * k2j + 2 * k3j + k4j)
    if not np.all(np.isfinite(log_j)) or not np.all(np.isfinite(x1)):
        raise InvalidStateError("non-finite particle position or Jacobian")
    return replace(particles, x=x1, log_j=log_j)
