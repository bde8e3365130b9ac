"""Interface jump diagnostics: one-sided probing of the stress, the flux and
vorticity jump relations, jump norms and the decay-rate fit."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..constitutive import ConstitutiveLaws, NuBounds
from ..errors import DiagnosticsError
from ..interface import InterfaceCurve, JumpField, LevelSet, curve_norm, jump_samples
from ..spectral import Interpolant, SpectralGrid
from ..state import DensityReconstructor

logger = logging.getLogger(__name__)

RESIDUAL_FLOOR = 1e-12
MIN_DECAY_SAMPLES = 20
DECAY_FLOOR = 1e-12


class OneSidedFields:
    """Side-aware evaluation of density and velocity gradient for probing.

    Density comes from the same-side particle fit; the velocity gradient
    from a spline of the spectral gradient.
    """

    def __init__(self, grid: SpectralGrid, u: np.ndarray, reconstructor: DensityReconstructor, levelset: LevelSet):
        self.grid = grid
        self.recon = reconstructor
        self.levelset = levelset
        self._grad = Interpolant(grid, grid.grad_vector(u))

    def _inside(self, points: np.ndarray, side) -> np.ndarray:
        if side is None:
            return self.levelset.value(points) > 0
        return np.full(len(points), side == "inside")

    def fval(self, points: np.ndarray, side=None) -> np.ndarray:
        return self.recon.fit(points, self._inside(points, side))

    def density(self, points: np.ndarray, side=None) -> np.ndarray:
        return np.asarray(self.recon.density_at(points, self._inside(points, side)))

    def velocity_gradient(self, points: np.ndarray, side=None) -> np.ndarray:
        return self._grad(points)


@dataclass(frozen=True)
class OneSidedLimits:
    """Per-marker limits of rho and grad u from both sides, with the derived quantities."""

    rho: JumpField
    grad: JumpField

    def _side(self, laws: ConstitutiveLaws, which: str) -> dict[str, np.ndarray]:
        rho = getattr(self.rho, which)
        g = getattr(self.grad, which)
        d = 0.5 * (g + np.swapaxes(g, 1, 2))
        div = g[:, 0, 0] + g[:, 1, 1]
        rot = g[:, 1, 0] - g[:, 0, 1]
        mu, lam = laws.mu(rho), laws.lam(rho)
        p = laws.P(rho) - laws.P_ref
        pi = 2.0 * mu[:, None, None] * d
        iso = lam * div - p
        pi[:, 0, 0] += iso
        pi[:, 1, 1] += iso
        return {
            "rho": rho,
            "grad": g,
            "d": d,
            "div": div,
            "rot": rot,
            "mu": mu,
            "lam": lam,
            "p": p,
            "pi": pi,
            "flux": (2.0 * mu + lam) * div - p,
        }

    def sides(self, laws: ConstitutiveLaws) -> tuple[dict, dict]:
        """Return (outside, inside) dictionaries of limits."""
        return self._side(laws, "plus"), self._side(laws, "minus")

    @property
    def valid(self) -> np.ndarray:
        return self.rho.valid & self.grad.valid

    @property
    def error(self) -> np.ndarray:
        return self.rho.error + self.grad.error


def probe_limits(
    fields: OneSidedFields,
    curve: InterfaceCurve,
    r0: float,
    exponent: float = 1.0,
) -> OneSidedLimits:
    classify = fields.levelset.classify
    return OneSidedLimits(
        rho=jump_samples(fields.density, curve, r0, h=fields.grid.h, classify=classify, exponent=exponent, field="rho"),
        grad=jump_samples(fields.velocity_gradient, curve, r0, h=fields.grid.h, classify=classify, exponent=exponent, field="grad_u"),
    )


@dataclass(frozen=True)
class JumpIdentityReport:
    residuals: dict[str, np.ndarray]
    valid: np.ndarray
    error: np.ndarray
    flux_jump: np.ndarray
    mu_rot_jump: np.ndarray

    @property
    def invalid_count(self) -> int:
        return int(np.sum(~self.valid))

    def median(self, name: str) -> float:
        vals = self.residuals[name][self.valid]
        return float(np.median(vals)) if vals.size else math.nan


def _scaled(num: np.ndarray, *scales: np.ndarray) -> np.ndarray:
    return num / np.maximum(np.max(np.stack(scales), axis=0), RESIDUAL_FLOOR)


def jump_relations(
    laws: ConstitutiveLaws,
    plus: dict,
    minus: dict,
    normals: np.ndarray,
    tangents: np.ndarray,
) -> dict[str, np.ndarray]:
    """Return the normalized per-marker residuals of the interface jump relations.

    ``plus`` holds the outside limits and ``minus`` the inside ones; jumps
    are outside minus inside.
    """
    n, tau = normals, tangents

    def jump(key):
        return plus[key] - minus[key]

    def avg(key):
        return 0.5 * (plus[key] + minus[key])

    d_nn = np.einsum("mjk,mj,mk->m", avg("d"), n, n)
    d_nt = np.einsum("mjk,mk,mj->m", avg("d"), n, tau)
    jmu, jlam = jump("mu"), jump("lam")

    pin_p = np.einsum("mjk,mk->mj", plus["pi"], n)
    pin_m = np.einsum("mjk,mk->mj", minus["pi"], n)
    r1 = _scaled(np.linalg.norm(pin_p - pin_m, axis=1), np.linalg.norm(pin_p, axis=1), np.linalg.norm(pin_m, axis=1))

    jg = jump("grad")
    jg_tau = np.einsum("mjk,mk->mj", jg, tau)
    gscale = np.maximum(np.linalg.norm(plus["grad"], axis=(1, 2)), np.linalg.norm(minus["grad"], axis=(1, 2)))
    r2 = _scaled(np.linalg.norm(jg_tau, axis=1), gscale)

    flux_rhs = 2.0 * jmu * (avg("div") - d_nn)
    r3 = _scaled(np.abs(jump("flux") - flux_rhs), np.abs(plus["flux"]), np.abs(minus["flux"]), np.abs(flux_rhs))

    mu_rot = plus["mu"] * plus["rot"] - minus["mu"] * minus["rot"]
    rot_rhs = jmu * (avg("rot") - 2.0 * d_nt)
    r4 = _scaled(
        np.abs(mu_rot - rot_rhs),
        np.abs(plus["mu"] * plus["rot"]),
        np.abs(minus["mu"] * minus["rot"]),
        np.abs(rot_rhs),
    )

    stiff = 2.0 * avg("mu") + avg("lam")
    div_lhs = stiff * jump("div")
    div_rhs = jump("p") - jlam * avg("div") - 2.0 * jmu * d_nn
    r5 = _scaled(np.abs(div_lhs - div_rhs), np.abs(div_lhs), np.abs(div_rhs))

    rot_lhs = avg("mu") * jump("rot")
    r6 = _scaled(np.abs(rot_lhs + 2.0 * jmu * d_nt), np.abs(rot_lhs), np.abs(2.0 * jmu * d_nt))

    a = jump("rot")[:, None] * tau + jump("div")[:, None] * n
    rank_one = np.linalg.norm(jg - a[:, :, None] * n[:, None, :], axis=(1, 2))
    return {
        "stress_normal": r1,
        "tangential_gradient": r2,
        "flux_jump": r3,
        "vorticity_jump": r4,
        "divergence_jump": r5,
        "rotation_jump": r6,
        "rank_one": _scaled(rank_one, gscale),
    }


def jump_identities(
    laws: ConstitutiveLaws,
    limits: OneSidedLimits,
    curve: InterfaceCurve,
) -> JumpIdentityReport:
    """Evaluate the jump relations at every marker from probed one-sided limits."""
    plus, minus = limits.sides(laws)
    residuals = jump_relations(laws, plus, minus, curve.normals, curve.tangents)
    valid = limits.valid
    if not np.all(valid):
        logger.warning("Jump identities: %d of %d markers invalid", int(np.sum(~valid)), len(valid))
    return JumpIdentityReport(
        residuals=residuals,
        valid=valid,
        error=limits.error,
        flux_jump=plus["flux"] - minus["flux"],
        mu_rot_jump=plus["mu"] * plus["rot"] - minus["mu"] * minus["rot"],
    )


# -- norms and rates ------------------------------------------------------------


@dataclass(frozen=True)
class JumpNorms:
    f_norms: dict[float, float]
    grad_jump_inf: float
    g_range: tuple[float, float]
    h_range: tuple[float, float]
    valid: int
    per_marker: np.ndarray


def jump_norms(
    laws: ConstitutiveLaws,
    fields: OneSidedFields,
    limits: OneSidedLimits,
    curve: InterfaceCurve,
    r0: float,
    exponents: list[float],
    exponent: float = 1.0,
) -> JumpNorms:
    """Return L^p(C) norms of [f(rho)], |[grad u]|_inf and the marker rates [P]/[f], [mu]/[f]."""
    fjump = jump_samples(fields.fval, curve, r0, h=fields.grid.h, classify=fields.levelset.classify, exponent=exponent, field="f")
    valid = fjump.valid
    weights = curve.arc_weights
    jf = np.where(valid, fjump.jump, 0.0)
    norms = {p: curve_norm(jf, weights, p) for p in exponents}
    jg = np.where(limits.valid[:, None, None], limits.grad.jump, 0.0)
    grad_inf = float(np.max(np.linalg.norm(jg, axis=(1, 2)))) if len(jg) else 0.0

    rho_p, rho_m = limits.rho.plus, limits.rho.minus
    usable = valid & limits.rho.valid & (np.abs(fjump.jump) > DECAY_FLOOR)
    if np.any(usable):
        df = fjump.jump[usable]
        g = (laws.P(rho_p[usable]) - laws.P(rho_m[usable])) / df
        h = (laws.mu(rho_p[usable]) - laws.mu(rho_m[usable])) / df
        g_range = (float(g.min()), float(g.max()))
        h_range = (float(h.min()), float(h.max()))
    else:
        g_range = h_range = (math.nan, math.nan)
    return JumpNorms(
        f_norms=norms,
        grad_jump_inf=grad_inf,
        g_range=g_range,
        h_range=h_range,
        valid=int(np.sum(valid)),
        per_marker=jf,
    )


def rates_within_bounds(norms: JumpNorms, nu: NuBounds, tol: float = 1e-6) -> bool:
    """Return True when the marker rates sit inside [nu_low, nu_high] and [-nu_high, nu_high]."""
    g_lo, g_hi = norms.g_range
    h_lo, h_hi = norms.h_range
    if math.isnan(g_lo):
        return True
    slack = tol * max(1.0, nu.high)
    return nu.low - slack <= g_lo and g_hi <= nu.high + slack and -nu.high - slack <= h_lo and h_hi <= nu.high + slack


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    fitted_rate: float
    predicted_rate: float
    samples: int
    passed: bool


def jump_decay_fit(
    times: np.ndarray,
    norms: np.ndarray,
    grad_inf_integral: np.ndarray,
    nu: NuBounds,
    p: float,
    tolerance: float = 0.10,
) -> DecayFit:
    """Fit the slope of log |[f(rho)]|_{L^p(C)} against t and compare with the predicted bound.

    The predicted slope is -nu_low + (6 nu_high + 1/p) * int |grad u|_inf / t
    over the fitted window.
    """
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    integ = np.asarray(grad_inf_integral, dtype=float)
    if len(times) < MIN_DECAY_SAMPLES:
        raise DiagnosticsError(f"decay fit needs at least {MIN_DECAY_SAMPLES} samples, got {len(times)}")
    below = np.flatnonzero(~(norms > DECAY_FLOOR))
    stop = int(below[0]) if below.size else len(norms)
    if stop < 2:
        raise DiagnosticsError("jump decayed below the floor before two samples were recorded")
    if stop < len(norms):
        logger.info("Decay fit window truncated at sample %d of %d (jump fully decayed)", stop, len(norms))
    t, y = times[:stop], np.log(norms[:stop])
    slope = float(np.polyfit(t, y, 1)[0])
    span = t[-1] - t[0]
    growth = (integ[stop - 1] - integ[0]) / span if span > 0 else 0.0
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    predicted = -nu.low + (6.0 * nu.high + inv_p) * growth
    passed = slope <= predicted + tolerance * abs(predicted)
    return DecayFit(exponent=p, fitted_rate=slope, predicted_rate=predicted, samples=stop, passed=bool(passed))
