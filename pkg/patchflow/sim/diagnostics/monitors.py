"""Blow-up monitors, the interface smallness composite and growth-law checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..constitutive import ConstitutiveLaws
from ..errors import BlowupError

logger = logging.getLogger(__name__)

MONITOR_NAMES = (
    "c_gamma",
    "grad_gamma_holder",
    "inv_rho_min",
    "inv_mu_min",
    "inv_band_gap",
    "u_h1",
    "rho_udot_l2",
    "pressure_pw",
    "composite",
)


def interface_composite(
    laws: ConstitutiveLaws,
    frak_p: float,
    ell: float,
    alpha: float,
    rho_plus: np.ndarray,
    rho_minus: np.ndarray,
    mu_s: float | None = None,
) -> float:
    """Return (P_gamma + ell^-alpha) ([mu]_inf + |([mu], [lam])|_inf |1 - mu_s / <mu>|_inf).

    ``rho_plus``/``rho_minus`` are the one-sided densities at valid markers.
    """
    rho_plus = np.asarray(rho_plus, dtype=float)
    rho_minus = np.asarray(rho_minus, dtype=float)
    if rho_plus.size == 0:
        return 0.0
    mu_s = laws.mu_ref if mu_s is None else mu_s
    mu_p, mu_m = laws.mu(rho_plus), laws.mu(rho_minus)
    jmu = np.abs(mu_p - mu_m)
    jlam = np.abs(laws.lam(rho_plus) - laws.lam(rho_minus))
    avg = 0.5 * (mu_p + mu_m)
    bracket = float(jmu.max()) + float(np.hypot(jmu, jlam).max()) * float(np.max(np.abs(1.0 - mu_s / avg)))
    return (frak_p + ell ** (-alpha)) * bracket


def viscosity_fluctuation(laws: ConstitutiveLaws, rho: np.ndarray, mu_s: float | None = None) -> float:
    """Return |mu(rho) - mu_s|_inf / min mu(rho)."""
    mu_s = laws.mu_ref if mu_s is None else mu_s
    mu = np.asarray(laws.mu(rho))
    return float(np.max(np.abs(mu - mu_s)) / np.min(mu))


@dataclass(frozen=True)
class MonitorReport:
    t: float
    values: dict[str, float]
    breaches: list[str] = field(default_factory=list)

    @property
    def green(self) -> bool:
        return not self.breaches

    def as_dict(self) -> dict:
        return {"t": self.t, "values": dict(self.values), "breaches": list(self.breaches)}


def blowup_monitors(
    laws: ConstitutiveLaws,
    t: float,
    rho: np.ndarray,
    *,
    c_gamma: float,
    grad_gamma_holder: float,
    u_h1: float,
    rho_udot_l2: float | None,
    pressure_pw: float | None,
    composite: float | None,
    thresholds: dict[str, float] | None = None,
) -> MonitorReport:
    """Collect the blow-up quantities and compare them with configured thresholds."""
    rho_min = float(np.min(rho))
    gap = rho_min - laws.a_lo
    values = {
        "c_gamma": c_gamma,
        "grad_gamma_holder": grad_gamma_holder,
        "inv_rho_min": 1.0 / rho_min,
        "inv_mu_min": 1.0 / float(np.min(laws.mu(rho))),
        "inv_band_gap": 1.0 / gap if gap > 0 else math.inf,
        "u_h1": u_h1,
        "rho_udot_l2": math.nan if rho_udot_l2 is None else rho_udot_l2,
        "pressure_pw": math.nan if pressure_pw is None else pressure_pw,
        "composite": math.nan if composite is None else composite,
    }
    breaches = []
    for name, limit in (thresholds or {}).items():
        value = values.get(name)
        if value is None:
            logger.warning("Unknown monitor threshold '%s' ignored", name)
            continue
        if not math.isnan(value) and value > limit:
            breaches.append(name)
    return MonitorReport(t=t, values=values, breaches=breaches)


def enforce(report: MonitorReport) -> None:
    """Raise BlowupError when any monitor breached its threshold."""
    if report.breaches:
        names = ", ".join(report.breaches)
        raise BlowupError(f"blow-up monitor tripped at t={report.t:.6g}: {names}", report.as_dict())


@dataclass(frozen=True)
class GrowthCheck:
    name: str
    constant: float
    passed: bool
    worst_increase: float


def growth_law(name: str, integrals: np.ndarray, values: np.ndarray, tolerance: float = 0.10) -> GrowthCheck:
    """Check that log(value) - C int |grad u|_inf is non-increasing, C fitted by least squares."""
    x = np.asarray(integrals, dtype=float)
    y = np.log(np.maximum(np.asarray(values, dtype=float), 1e-300))
    if len(x) == 0:
        return GrowthCheck(name=name, constant=0.0, passed=True, worst_increase=0.0)
    if len(x) < 2 or np.ptp(x) == 0:
        spread = float(np.ptp(y))
        return GrowthCheck(
            name=name,
            constant=0.0,
            passed=spread <= tolerance * max(1.0, abs(float(y[0]))),
            worst_increase=spread,
        )
    constant = max(0.0, float(np.polyfit(x, y, 1)[0]))
    r = y - constant * x
    worst = float(np.max(r - np.minimum.accumulate(r)))
    passed = worst <= tolerance * max(1.0, abs(r[0]))
    return GrowthCheck(name=name, constant=constant, passed=bool(passed), worst_increase=worst)
