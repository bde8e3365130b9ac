"""Interface tracking: marker curve, level set, one-sided probing and
piecewise Hoelder estimation.

Markers are stored unwrapped (no periodic folding) so the polyline stays
contiguous; only field lookups wrap.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Literal

import numpy as np
from scipy import spatial

from .errors import InterfaceError, InvalidStateError
from .spectral import Interpolant, SpectralGrid

logger = logging.getLogger(__name__)

Side = Literal["inside", "outside"] | None
Evaluate = Callable[[np.ndarray, Side], np.ndarray]
Sampler = Callable[[np.ndarray, float], np.ndarray]
Classifier = Callable[[np.ndarray], np.ndarray]

INSIDE, OUTSIDE, AMBIGUOUS = 1, -1, 0


def unsided(fn: Callable[[np.ndarray], np.ndarray]) -> Evaluate:
    """Adapt a point-only function to the (points, side) evaluate signature."""

    def evaluate(points: np.ndarray, side: Side = None) -> np.ndarray:
        return fn(points)

    return evaluate


# -- curve -------------------------------------------------------------------


@dataclass(frozen=True)
class InterfaceCurve:
    """Closed counter-clockwise marker polyline with its reference parameter."""

    points: np.ndarray
    s: np.ndarray
    period: float

    @classmethod
    def from_points(cls, points: np.ndarray, s: np.ndarray | None = None, period: float | None = None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
            raise InterfaceError(f"curve needs an (M, 2) array with M >= 4, got {pts.shape}")
        seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        if s is None:
            s = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
            period = float(seg.sum())
        s = np.asarray(s, dtype=float)
        period = float(period if period is not None else seg.sum())
        if _signed_area(pts) < 0:
            pts = pts[::-1].copy()
            s = (period - s[::-1]) % period
            shift = int(np.argmin(s))
            pts, s = np.roll(pts, -shift, axis=0), np.roll(s, -shift)
        return cls(points=pts, s=s, period=period)

    @property
    def size(self) -> int:
        return len(self.points)

    @cached_property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.roll(self.points, -1, axis=0) - self.points, axis=1)

    @property
    def length(self) -> float:
        return float(self.segment_lengths.sum())

    @cached_property
    def arc_weights(self) -> np.ndarray:
        """Quadrature weight per marker: half of each adjacent segment."""
        seg = self.segment_lengths
        return 0.5 * (seg + np.roll(seg, 1))

    @cached_property
    def tangents(self) -> np.ndarray:
        d = np.roll(self.points, -1, axis=0) - np.roll(self.points, 1, axis=0)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    @cached_property
    def normals(self) -> np.ndarray:
        """Outward unit normals (tangent rotated clockwise)."""
        t = self.tangents
        return np.stack([t[:, 1], -t[:, 0]], axis=1)

    @property
    def spacing_ratio(self) -> float:
        seg = self.segment_lengths
        return float(seg.max() / max(seg.min(), 1e-300))

    @property
    def signed_area(self) -> float:
        return _signed_area(self.points)

    def parameter_distance(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        d = np.abs(self.s[i] - self.s[j]) % self.period
        return np.minimum(d, self.period - d)

    @cached_property
    def parameter_gradient(self) -> np.ndarray:
        """Centered difference of the markers in the reference parameter."""
        ds_fwd = (np.roll(self.s, -1) - self.s) % self.period
        ds_bwd = (self.s - np.roll(self.s, 1)) % self.period
        d = np.roll(self.points, -1, axis=0) - np.roll(self.points, 1, axis=0)
        return d / (ds_fwd + ds_bwd)[:, None]

    def reparameterized(self) -> InterfaceCurve:
        """Resample markers uniformly in arclength, carrying the reference parameter."""
        m = self.size
        closed = np.vstack([self.points, self.points[:1]])
        cum = np.concatenate([[0.0], np.cumsum(self.segment_lengths)])
        s_unwrapped = self.s[0] + np.concatenate([[0.0], np.cumsum((np.roll(self.s, -1) - self.s) % self.period)])
        targets = np.linspace(0.0, cum[-1], m, endpoint=False)
        pts = np.stack([np.interp(targets, cum, closed[:, 0]), np.interp(targets, cum, closed[:, 1])], axis=1)
        s_new = np.interp(targets, cum, s_unwrapped)
        logger.debug("Reparameterized curve markers=%d ratio_before=%.3f", m, self.spacing_ratio)
        return replace(self, points=pts, s=s_new)


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _orient(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def self_intersections(curve: InterfaceCurve, block: int = 256) -> list[tuple[int, int]]:
    """Return index pairs of non-adjacent segments that properly cross."""
    p = curve.points
    q = np.roll(p, -1, axis=0)
    m = len(p)
    hits: list[tuple[int, int]] = []
    idx = np.arange(m)
    for start in range(0, m, block):
        i = idx[start : start + block, None]
        j = idx[None, :]
        gap = np.abs(i - j)
        candidate = (j > i) & (gap > 1) & (gap < m - 1)
        a, b = p[i[:, 0]][:, None, :], q[i[:, 0]][:, None, :]
        c, d = p[None, :, :], q[None, :, :]
        cross = (_orient(a, b, c) * _orient(a, b, d) < 0) & (_orient(c, d, a) * _orient(c, d, b) < 0)
        ii, jj = np.nonzero(cross & candidate)
        hits.extend(zip((ii + start).tolist(), jj.tolist()))
    return hits


@dataclass(frozen=True)
class CurveGeometry:
    length: float
    grad_sup: float
    grad_holder: float
    c_gamma: float
    alpha: float


def _pairwise_max(values: Callable[[np.ndarray, np.ndarray], np.ndarray], m: int, block: int = 256) -> float:
    best = 0.0
    idx = np.arange(m)
    for start in range(0, m, block):
        i = idx[start : start + block, None]
        j = idx[None, :]
        mask = j > i
        if not mask.any():
            continue
        vals = values(np.broadcast_to(i, mask.shape)[mask], np.broadcast_to(j, mask.shape)[mask])
        if vals.size:
            best = max(best, float(np.max(vals)))
    return best


def geometry(curve: InterfaceCurve, alpha: float, check: bool = True) -> CurveGeometry:
    """Return |C|, sup |grad gamma|, its alpha-Hoelder seminorm and c_gamma (all pairs)."""
    if check:
        crossings = self_intersections(curve)
        if crossings:
            raise InterfaceError(f"curve self-intersects at {len(crossings)} segment pair(s), first={crossings[0]}")
    grad = curve.parameter_gradient
    pts = curve.points

    def holder(i, j):
        d = curve.parameter_distance(i, j)
        ok = d > 0
        return np.linalg.norm(grad[i] - grad[j], axis=1)[ok] / d[ok] ** alpha

    def chord(i, j):
        dist = np.linalg.norm(pts[i] - pts[j], axis=1)
        d = curve.parameter_distance(i, j)
        ok = dist > 0
        return d[ok] / dist[ok]

    return CurveGeometry(
        length=curve.length,
        grad_sup=float(np.max(np.linalg.norm(grad, axis=1))),
        grad_holder=_pairwise_max(holder, curve.size),
        c_gamma=_pairwise_max(chord, curve.size),
        alpha=alpha,
    )


def frak_P(geom: CurveGeometry) -> float:
    """Return (1 + |C|) (1 + sup|grad gamma| + c_gamma)^3 [grad gamma]_alpha."""
    return (1.0 + geom.length) * (1.0 + geom.grad_sup + geom.c_gamma) ** 3 * geom.grad_holder


def _rk4(points: np.ndarray, sampler: Sampler, dt: float, sign: float = 1.0, theta0: float = 0.0) -> np.ndarray:
    """Integrate dx/dt = sign * u(x, theta) over one step; theta runs from theta0 by sign."""
    th = theta0
    k1 = sampler(points, th)
    k2 = sampler(points + 0.5 * sign * dt * k1, th + 0.5 * sign)
    k3 = sampler(points + 0.5 * sign * dt * k2, th + 0.5 * sign)
    k4 = sampler(points + sign * dt * k3, th + sign)
    return points + sign * dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_courant(speed: float, dt: float, h: float | None, limit: float) -> None:
    if h is not None and speed * dt > limit * h:
        raise InvalidStateError(f"CFL violation: max speed {speed:.4g} * dt {dt:.4g} exceeds {limit} h (h={h:.4g})")


def advect_markers(
    curve: InterfaceCurve,
    sampler: Sampler,
    dt: float,
    *,
    h: float | None = None,
    courant_limit: float = 0.9,
    max_ratio: float = 3.0,
) -> InterfaceCurve:
    """Advance markers by RK4; ``sampler(points, theta)`` gives u at t + theta dt."""
    u0 = sampler(curve.points, 0.0)
    speed = float(np.max(np.linalg.norm(u0, axis=1))) if len(u0) else 0.0
    _check_courant(speed, dt, h, courant_limit)
    if speed == 0.0 and not np.any(sampler(curve.points, 1.0)):
        return curve
    moved = replace(curve, points=_rk4(curve.points, sampler, dt))
    if moved.spacing_ratio > max_ratio:
        moved = moved.reparameterized()
    return moved


# -- level set ---------------------------------------------------------------


class LevelSet:
    """phi on the grid with D = {phi > 0}; gradients by 4th-order differences."""

    def __init__(self, grid: SpectralGrid, phi: np.ndarray):
        self.grid = grid
        self.phi = np.asarray(phi, dtype=float)

    @cached_property
    def gradient(self) -> np.ndarray:
        f, h = self.phi, self.grid.h
        out = []
        for axis in (0, 1):
            d = (-np.roll(f, -2, axis) + 8 * np.roll(f, -1, axis) - 8 * np.roll(f, 1, axis) + np.roll(f, 2, axis)) / (
                12.0 * h
            )
            out.append(d)
        return np.stack(out)

    @cached_property
    def _phi_interp(self) -> Interpolant:
        return Interpolant(self.grid, self.phi)

    @cached_property
    def _grad_interp(self) -> Interpolant:
        return Interpolant(self.grid, self.gradient)

    def value(self, points: np.ndarray) -> np.ndarray:
        return self._phi_interp(points)

    def gradient_at(self, points: np.ndarray) -> np.ndarray:
        return self._grad_interp(points)

    def classify(self, points: np.ndarray) -> np.ndarray:
        """Return +1 inside, -1 outside, 0 where |phi| < h |grad phi|."""
        phi = self.value(points)
        gnorm = np.linalg.norm(self.gradient_at(points), axis=-1)
        labels = np.where(phi > 0, INSIDE, OUTSIDE)
        return np.where(np.abs(phi) < self.grid.h * gnorm, AMBIGUOUS, labels).astype(np.int8)

    def grid_inside(self) -> np.ndarray:
        return self.phi > 0


def advect_levelset(levelset: LevelSet, sampler: Sampler, dt: float) -> LevelSet:
    """Semi-Lagrangian update phi'(x) = phi(X(t_n; t_n + dt, x)) with an RK4 backtrace."""
    nodes = levelset.grid.points
    if not np.any(sampler(nodes, 1.0)) and not np.any(sampler(nodes, 0.0)):
        return levelset
    feet = _rk4(nodes, sampler, dt, sign=-1.0, theta0=1.0)
    phi = levelset.value(feet).reshape(levelset.grid.n, levelset.grid.n)
    return LevelSet(levelset.grid, phi)


# -- one-sided probing ---------------------------------------------------------


@dataclass(frozen=True)
class JumpSample:
    marker: int
    field: str
    jump: float
    average: float
    error: float
    valid: bool


@dataclass(frozen=True)
class JumpField:
    """One-sided limits at every marker; ``plus`` is outside, ``minus`` inside."""

    field: str
    plus: np.ndarray
    minus: np.ndarray
    error: np.ndarray
    valid: np.ndarray

    @property
    def jump(self) -> np.ndarray:
        return self.plus - self.minus

    @property
    def average(self) -> np.ndarray:
        return 0.5 * (self.plus + self.minus)

    def sample(self, marker: int) -> JumpSample:
        j, a, e = self.jump[marker], self.average[marker], self.error[marker]
        return JumpSample(
            marker=marker,
            field=self.field,
            jump=float(np.max(np.abs(j))) if np.ndim(j) else float(j),
            average=float(np.max(np.abs(a))) if np.ndim(a) else float(a),
            error=float(e),
            valid=bool(self.valid[marker]),
        )


def _one_sided_limit(values: np.ndarray, ok: np.ndarray, radii: np.ndarray, exponent: float):
    """Richardson-extrapolate g(r) = g0 + c r^exponent to r = 0 from valid radii."""
    w = radii**exponent
    extra = (1,) * (values.ndim - 2)

    def rich(a: int, b: int) -> np.ndarray:
        return (values[b] * w[a] - values[a] * w[b]) / (w[a] - w[b])

    e01, e12, e02 = rich(0, 1), rich(1, 2), rich(0, 2)
    v0, v1, v2 = ok[0], ok[1], ok[2]
    limit = np.full(values.shape[1:], np.nan)
    err = np.full(values.shape[1], np.nan)

    def spread(x):
        return np.max(np.abs(x).reshape(len(x), -1), axis=1)

    cases = [
        (v0 & v1 & v2, e12, spread(e12 - e01)),
        (v0 & v1 & ~v2, e01, spread(values[1] - e01)),
        (~v0 & v1 & v2, e12, spread(values[2] - e12)),
        (v0 & ~v1 & v2, e02, spread(values[2] - e02)),
    ]
    for mask, est, e in cases:
        limit = np.where(mask.reshape(mask.shape + extra), est, limit)
        err = np.where(mask, e, err)
    valid = (v0.astype(int) + v1.astype(int) + v2.astype(int)) >= 2
    floor = 64 * np.finfo(float).eps * np.maximum(1.0, spread(np.nan_to_num(limit)))
    err = np.where(valid, np.maximum(err, floor), np.nan)
    return limit, err, valid


def jump_samples(
    evaluate: Evaluate,
    curve: InterfaceCurve,
    r0: float,
    *,
    h: float | None = None,
    classify: Classifier | None = None,
    exponent: float = 1.0,
    field: str = "g",
) -> JumpField:
    """Probe g at gamma +- r n for r in (r0, r0/2, r0/4) and extrapolate both sides."""
    _check_jump_radius(r0, h)
    return _probe(evaluate, curve.points, curve.normals, r0, classify, exponent, field)


def _check_jump_radius(r0: float, h: float | None) -> None:
    # sample radii must stay outside the two-cell smeared band
    if h is not None and r0 <= 2.0 * h:
        raise InvalidStateError(f"jump radius {r0:g} must exceed 2h = {2.0 * h:g}")


def _probe(
    evaluate: Evaluate,
    pts: np.ndarray,
    nrm: np.ndarray,
    r0: float,
    classify: Classifier | None,
    exponent: float,
    field: str,
) -> JumpField:
    radii = np.array([r0, r0 / 2.0, r0 / 4.0])
    outer, inner, ok_out, ok_in = [], [], [], []
    for r in radii:
        p_out, p_in = pts + r * nrm, pts - r * nrm
        outer.append(np.asarray(evaluate(p_out, "outside"), dtype=float))
        inner.append(np.asarray(evaluate(p_in, "inside"), dtype=float))
        if classify is None:
            ok_out.append(np.ones(len(pts), dtype=bool))
            ok_in.append(np.ones(len(pts), dtype=bool))
        else:
            ok_out.append(classify(p_out) == OUTSIDE)
            ok_in.append(classify(p_in) == INSIDE)
    plus, err_p, valid_p = _one_sided_limit(np.stack(outer), np.stack(ok_out), radii, exponent)
    minus, err_m, valid_m = _one_sided_limit(np.stack(inner), np.stack(ok_in), radii, exponent)
    valid = valid_p & valid_m
    dropped = int(np.sum(~valid))
    if dropped:
        logger.warning("Jump probing field=%s invalid markers=%d of %d", field, dropped, len(pts))
    return JumpField(field=field, plus=plus, minus=minus, error=err_p + err_m, valid=valid)


def jump_average(
    evaluate: Evaluate,
    curve: InterfaceCurve,
    marker: int,
    r0: float,
    *,
    h: float | None = None,
    normal: np.ndarray | None = None,
    classify: Classifier | None = None,
    exponent: float = 1.0,
    field: str = "g",
) -> JumpSample:
    """Return the jump sample of ``evaluate`` at one marker; ``normal`` defaults to the curve normal."""
    _check_jump_radius(r0, h)
    nrm = curve.normals[marker] if normal is None else np.asarray(normal, dtype=float)
    one = _probe(evaluate, curve.points[marker][None], nrm[None], r0, classify, exponent, field)
    return replace(one.sample(0), marker=marker)


# -- piecewise Hoelder estimation --------------------------------------------


@dataclass(frozen=True)
class HolderEstimate:
    value: float
    pairs_used: int
    budget: int


def holder_pw(
    evaluate: Evaluate,
    *,
    L: float,
    h: float,
    alpha: float,
    cutoff: float,
    side: Side = None,
    classify: Classifier | None = None,
    budget: int = 100_000,
    rng: np.random.Generator,
    bounds: tuple[float, float, float, float] | None = None,
    keep: Callable[[np.ndarray], np.ndarray] | None = None,
    bins: int = 8,
) -> HolderEstimate:
    """Estimate the alpha-Hoelder seminorm of a field on one side of the interface.

    Pairs are drawn with |x - y| stratified in log-spaced bins over
    [4h, cutoff]. ``bounds`` = (xmin, xmax, ymin, ymax) restricts the first
    point; ``keep`` filters pairs by position.
    """
    rmin = 4.0 * h
    if cutoff < rmin:
        raise InterfaceError(f"cutoff {cutoff:g} is below 4h = {rmin:g}")
    x0, x1, y0, y1 = bounds if bounds is not None else (0.0, L, 0.0, L)
    x = np.column_stack([rng.uniform(x0, x1, budget), rng.uniform(y0, y1, budget)])
    edges = np.geomspace(rmin, cutoff, bins + 1) if cutoff > rmin else np.array([rmin, rmin])
    which = np.arange(budget) % bins
    r = rng.uniform(edges[which], edges[which + 1]) if cutoff > rmin else np.full(budget, rmin)
    ang = rng.uniform(0.0, 2.0 * math.pi, budget)
    y = x + r[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])

    mask = np.ones(budget, dtype=bool)
    if side is not None:
        if classify is None:
            raise InterfaceError("a side classifier is required for one-sided estimates")
        want = INSIDE if side == "inside" else OUTSIDE
        mask &= (classify(x) == want) & (classify(y) == want)
    if keep is not None:
        mask &= keep(x) & keep(y)
    used = int(mask.sum())
    if used == 0:
        return HolderEstimate(value=0.0, pairs_used=0, budget=budget)
    gx = np.asarray(evaluate(x[mask], side), dtype=float)
    gy = np.asarray(evaluate(y[mask], side), dtype=float)
    diff = np.abs(gx - gy).reshape(used, -1).max(axis=1)
    value = float(np.max(diff / r[mask] ** alpha))
    return HolderEstimate(value=value, pairs_used=used, budget=budget)


@dataclass(frozen=True)
class LevelSetMetrics:
    grad_inf: float
    grad_holder: float
    ell: float
    pairs_used: int


def levelset_metrics(
    levelset: LevelSet,
    curve: InterfaceCurve,
    alpha: float,
    *,
    rng: np.random.Generator,
    budget: int = 100_000,
) -> LevelSetMetrics:
    """Return |grad phi|_inf on the curve, [grad phi]_alpha in a band and ell_phi."""
    grid = levelset.grid
    grad_inf = float(np.min(np.linalg.norm(levelset.gradient_at(curve.points), axis=1)))
    if grad_inf < 1e-6:
        raise InterfaceError(f"degenerate level set: |grad phi|_inf = {grad_inf:.3g} on the curve")
    half = 0.1 * grid.L
    lo, hi = curve.points.min(axis=0) - half, curve.points.max(axis=0) + half
    tree = spatial.cKDTree(curve.points)

    def in_band(p: np.ndarray) -> np.ndarray:
        return tree.query(p, k=1)[0] <= half

    est = holder_pw(
        unsided(levelset.gradient_at),
        L=grid.L,
        h=grid.h,
        alpha=alpha,
        cutoff=max(half, 4.0 * grid.h),
        budget=budget,
        rng=rng,
        bounds=(lo[0], hi[0], lo[1], hi[1]),
        keep=in_band,
    )
    ell = 1.0 if est.value == 0.0 else min(1.0, (grad_inf / est.value) ** (1.0 / alpha))
    return LevelSetMetrics(grad_inf=grad_inf, grad_holder=est.value, ell=ell, pairs_used=est.pairs_used)


def curve_norm(values: np.ndarray, weights: np.ndarray, p: float) -> float:
    """Return the L^p(C) norm of per-marker values with arclength weights."""
    vals = np.abs(np.asarray(values, dtype=float)).reshape(len(weights), -1).max(axis=1)
    if vals.size == 0:
        return 0.0
    if math.isinf(p):
        return float(vals.max())
    return float(np.sum(weights * vals**p) ** (1.0 / p))
