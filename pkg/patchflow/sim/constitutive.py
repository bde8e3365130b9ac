"""Pressure and viscosity laws, the damped variable f(rho), potential energies
and the difference-quotient bounds that govern jump decay."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate

from .errors import LawError
from .utils import LawPreset

logger = logging.getLogger(__name__)

Law = Callable[[np.ndarray], np.ndarray]

_QUAD_OPTS = {"epsabs": 0.0, "epsrel": 1e-12, "limit": 200}
_TABLE_NODES = 1025
_BAND_SLACK = 1e-12


@dataclass(frozen=True)
class NuBounds:
    low: float
    high: float
    pressure_high: float
    mu_ratio: float
    lam_ratio: float
    resolution: int


class _PrimitiveTable:
    """Cubic Hermite table of G(rho) = int_{rho_ref}^{rho} g(s) ds over the band."""

    def __init__(self, integrand: Callable[[float], float], rho_ref: float, lo: float, hi: float):
        left = np.linspace(lo, rho_ref, _TABLE_NODES)
        right = np.linspace(rho_ref, hi, _TABLE_NODES)
        nodes = np.concatenate([left, right[1:]])
        pieces = np.array([integrate.quad(integrand, a, b, **_QUAD_OPTS)[0] for a, b in zip(nodes[:-1], nodes[1:])])
        primitive = np.concatenate([[0.0], np.cumsum(pieces)])
        primitive -= primitive[_TABLE_NODES - 1]
        slopes = np.array([integrand(x) for x in nodes])
        self._spline = interpolate.CubicHermiteSpline(nodes, primitive, slopes)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return self._spline(rho)


class ConstitutiveLaws:
    """P, mu, lambda with derivatives, reference state and admissible band.

    Law callables must accept numpy arrays. ``f_closed`` optionally gives
    f(rho) in closed form; otherwise quadrature is used.
    """

    def __init__(
        self,
        pressure: Law,
        dpressure: Law,
        mu: Law,
        dmu: Law,
        lam: Law,
        dlam: Law,
        rho_ref: float,
        band: tuple[float, float],
        *,
        f_closed: Law | None = None,
        name: str = "custom",
        samples: int = 4001,
    ):
        lo, hi = float(band[0]), float(band[1])
        if not (0 < lo < rho_ref < hi):
            raise LawError(f"band [{lo}, {hi}] must contain rho_ref={rho_ref} strictly")
        self.P, self.dP = pressure, dpressure
        self.mu, self.dmu = mu, dmu
        self.lam, self.dlam = lam, dlam
        self.rho_ref = float(rho_ref)
        self.a_lo, self.a_hi = lo, hi
        self.name = name
        self._f_closed = f_closed
        self._tables: dict[tuple[str, float], _PrimitiveTable] = {}

        rho = np.linspace(lo, hi, samples)
        if np.any(np.asarray(dpressure(rho)) <= 0):
            raise LawError("pressure must be strictly increasing on the band")
        if np.any(np.asarray(mu(rho)) <= 0):
            raise LawError("mu must be positive on the band")
        if np.any(np.asarray(lam(rho)) < 0):
            raise LawError("lambda must be non-negative on the band")

        self.P_ref = float(pressure(np.asarray(self.rho_ref)))
        self.mu_ref = float(mu(np.asarray(self.rho_ref)))
        self.lam_ref = float(lam(np.asarray(self.rho_ref)))
        self.f_lo = float(self.f_of_rho(lo))
        self.f_hi = float(self.f_of_rho(hi))

    # -- construction ----------------------------------------------------

    @classmethod
    def from_preset(
        cls,
        preset: LawPreset,
        density_range: tuple[float, float] | None = None,
    ) -> ConstitutiveLaws:
        """Build laws from a preset; the band defaults to [rho_min/4, 4 rho_max]."""
        rho_ref = preset.rho_ref
        if preset.band is not None:
            band = preset.band
        else:
            lo, hi = density_range or (rho_ref, rho_ref)
            band = (min(lo, rho_ref) / 4.0, 4.0 * max(hi, rho_ref))

        mu0 = preset.mu
        eps = preset.epsilon if preset.viscosity == "affine" else 0.0

        def mu(r):
            return mu0 + eps * (np.asarray(r, dtype=float) - rho_ref)

        def dmu(r):
            return np.full_like(np.asarray(r, dtype=float), eps)

        b, beta = preset.b, preset.beta
        if preset.bulk == "power" and beta != 0.0:

            def lam(r):
                return b * np.power(np.asarray(r, dtype=float), beta)

            def dlam(r):
                return b * beta * np.power(np.asarray(r, dtype=float), beta - 1.0)

            def f_lam(r):
                return (b / beta) * (np.power(r, beta) - rho_ref**beta)
        else:

            def lam(r):
                return np.full_like(np.asarray(r, dtype=float), b)

            def dlam(r):
                return np.zeros_like(np.asarray(r, dtype=float))

            def f_lam(r):
                return b * np.log(r / rho_ref)

        def f_closed(r):
            r = np.asarray(r, dtype=float)
            return 2.0 * (mu0 - eps * rho_ref) * np.log(r / rho_ref) + 2.0 * eps * (r - rho_ref) + f_lam(r)

        if preset.pressure == "gamma":
            a, gam = preset.a, preset.gamma

            def pressure(r):
                return a * np.power(np.asarray(r, dtype=float), gam)

            def dpressure(r):
                return a * gam * np.power(np.asarray(r, dtype=float), gam - 1.0)
        else:
            a, kappa = preset.a, preset.kappa

            def pressure(r):
                return a + kappa * f_closed(r)

            def dpressure(r):
                r = np.asarray(r, dtype=float)
                return kappa * (2.0 * mu(r) + lam(r)) / r

        name = f"{preset.pressure}/{preset.viscosity}/{preset.bulk}"
        return cls(pressure, dpressure, mu, dmu, lam, dlam, rho_ref, band, f_closed=f_closed, name=name)

    # -- band handling ---------------------------------------------------

    def _check_band(self, rho: np.ndarray) -> None:
        slack = _BAND_SLACK * self.a_hi
        if np.any(rho < self.a_lo - slack) or np.any(rho > self.a_hi + slack) or not np.all(np.isfinite(rho)):
            raise LawError(
                f"density outside admissible band [{self.a_lo:g}, {self.a_hi:g}]: "
                f"min={np.nanmin(rho):g} max={np.nanmax(rho):g}"
            )

    @property
    def viscosity_constant(self) -> bool:
        rho = np.linspace(self.a_lo, self.a_hi, 64)
        return bool(np.all(np.asarray(self.dmu(rho)) == 0) and np.all(np.asarray(self.dlam(rho)) == 0))

    def stiffness(self, rho: np.ndarray) -> np.ndarray:
        """Return (2 mu + lambda)(rho)."""
        return 2.0 * self.mu(rho) + self.lam(rho)

    # -- damped variable ------------------------------------------------

    def _f_integrand(self, s: float) -> float:
        return float(self.stiffness(np.asarray(s))) / s

    def _table(self, key: str, l_exp: float, integrand: Callable[[float], float]) -> _PrimitiveTable:
        cache_key = (key, l_exp)
        if cache_key not in self._tables:
            logger.debug("Building %s primitive table laws=%s l=%s", key, self.name, l_exp)
            self._tables[cache_key] = _PrimitiveTable(integrand, self.rho_ref, self.a_lo, self.a_hi)
        return self._tables[cache_key]

    def f_of_rho(self, rho):
        """Return f(rho) = int_{rho_ref}^{rho} (2 mu(s) + lambda(s)) / s ds."""
        arr = np.asarray(rho, dtype=float)
        self._check_band(arr)
        if self._f_closed is not None:
            out = np.asarray(self._f_closed(arr), dtype=float)
        elif arr.ndim == 0:
            out = np.asarray(integrate.quad(self._f_integrand, self.rho_ref, float(arr), **_QUAD_OPTS)[0])
        else:
            out = self._table("f", 0.0, self._f_integrand)(arr)
        out = np.where(arr == self.rho_ref, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def f_prime(self, rho):
        rho = np.asarray(rho, dtype=float)
        return self.stiffness(rho) / rho

    def f_inverse(self, y, tol: float = 1e-12):
        """Return rho with |f(rho) - y| < tol, by bisection then safeguarded Newton."""
        y_arr = np.asarray(y, dtype=float)
        slack = 1e-12 * max(1.0, abs(self.f_lo), abs(self.f_hi))
        if not np.all(np.isfinite(y_arr)) or np.any(y_arr < self.f_lo - slack) or np.any(y_arr > self.f_hi + slack):
            raise LawError(
                f"f-value outside f(band) = [{self.f_lo:g}, {self.f_hi:g}]: "
                f"min={np.nanmin(y_arr):g} max={np.nanmax(y_arr):g}"
            )
        y_c = np.clip(y_arr, self.f_lo, self.f_hi)
        lo = np.full(y_c.shape, self.a_lo)
        hi = np.full(y_c.shape, self.a_hi)
        for _ in range(12):
            mid = 0.5 * (lo + hi)
            below = np.asarray(self.f_of_rho(mid)) < y_c
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        rho = 0.5 * (lo + hi)
        for _ in range(60):
            resid = np.asarray(self.f_of_rho(rho)) - y_c
            if np.all(np.abs(resid) < tol):
                break
            lo = np.where(resid < 0, rho, lo)
            hi = np.where(resid > 0, rho, hi)
            cand = rho - resid / self.f_prime(rho)
            outside = (cand <= lo) | (cand >= hi)
            rho = np.where(resid == 0, rho, np.where(outside, 0.5 * (lo + hi), cand))
        rho = np.where(y_c == 0.0, self.rho_ref, rho)
        return float(rho) if rho.ndim == 0 else rho

    # -- potential energies ---------------------------------------------

    def _h_integrand(self, l_exp: float) -> Callable[[float], float]:
        p_ref = self.P_ref

        def integrand(s: float) -> float:
            dp = float(self.P(np.asarray(s))) - p_ref
            return abs(dp) ** (l_exp - 1.0) * dp / (s * s)

        return integrand

    def potential_energy(self, rho, l_exp: float = 1.0):
        """Return H_l(rho) = rho int_{rho_ref}^{rho} s^-2 |P - P_ref|^{l-1} (P - P_ref) ds."""
        if l_exp < 1:
            raise LawError(f"potential energy exponent must be >= 1, got {l_exp}")
        arr = np.asarray(rho, dtype=float)
        self._check_band(arr)
        integrand = self._h_integrand(l_exp)
        if arr.ndim == 0:
            val = integrate.quad(integrand, self.rho_ref, float(arr), **_QUAD_OPTS)[0]
            return float(arr) * val
        primitive = self._table("H", l_exp, integrand)(arr)
        return arr * np.where(arr == self.rho_ref, 0.0, primitive)

    # -- bounds ----------------------------------------------------------

    def nu_bounds(self, resolution: int = 2000, block: int = 256) -> NuBounds:
        """Return inf/sup of dP/df over sampled pairs; the sup also dominates |dmu/df|, |dlam/df|."""
        rho = np.linspace(self.a_lo, self.a_hi, resolution)
        p = np.asarray(self.P(rho), dtype=float)
        if np.any(np.diff(p) <= 0):
            raise LawError("pressure is not strictly increasing on the sampled band")
        f = np.asarray(self.f_of_rho(rho), dtype=float)
        mu = np.asarray(self.mu(rho), dtype=float)
        lam = np.asarray(self.lam(rho), dtype=float)

        low, high, mu_ratio, lam_ratio = math.inf, 0.0, 0.0, 0.0
        for start in range(0, resolution, block):
            rows = slice(start, min(start + block, resolution))
            df = f[rows, None] - f[None, :]
            mask = np.abs(df) > 0
            safe = np.where(mask, df, 1.0)
            ratio = (p[rows, None] - p[None, :]) / safe
            low = min(low, float(np.min(ratio[mask])))
            high = max(high, float(np.max(ratio[mask])))
            mu_ratio = max(mu_ratio, float(np.max(np.abs(mu[rows, None] - mu[None, :])[mask] / np.abs(safe[mask]))))
            lam_ratio = max(lam_ratio, float(np.max(np.abs(lam[rows, None] - lam[None, :])[mask] / np.abs(safe[mask]))))
        bounds = NuBounds(
            low=low,
            high=max(high, mu_ratio, lam_ratio),
            pressure_high=high,
            mu_ratio=mu_ratio,
            lam_ratio=lam_ratio,
            resolution=resolution,
        )
        logger.debug("nu bounds laws=%s low=%.6g high=%.6g resolution=%d", self.name, low, bounds.high, resolution)
        return bounds

    def damping_ratio(self, l_exp: float, samples: int = 2001) -> float:
        """Return ((2 mu_min + lam_min) / (2 mu_max + lam_max))^(-1/(l+1)) over the band."""
        rho = np.linspace(self.a_lo, self.a_hi, samples)
        mu = np.asarray(self.mu(rho))
        lam = np.asarray(self.lam(rho))
        ratio = (2.0 * mu.min() + lam.min()) / (2.0 * mu.max() + lam.max())
        return float(ratio ** (-1.0 / (l_exp + 1.0)))
