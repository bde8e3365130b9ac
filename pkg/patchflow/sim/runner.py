"""Run orchestration: the time loop with streamed diagnostics, and the
verification drivers behind the CLI subcommands."""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .constitutive import ConstitutiveLaws
from .diagnostics import (
    EnergyLedger,
    HoffFunctionals,
    OneSidedFields,
    Snapshot,
    ThetaFunctional,
    blowup_monitors,
    classical_energy,
    effective_flux,
    enforce,
    growth_law,
    hoff2_identity,
    interface_composite,
    jump_decay_fit,
    jump_identities,
    jump_norms,
    lagrangian_mass,
    pressure_damping,
    probe_limits,
    rates_within_bounds,
    viscosity_fluctuation,
    vorticity_identity,
)
from .errors import BlowupError, DiagnosticsError, InterfaceError, InvalidStateError, LawError
from .initdata import DensityPatch, InitialData, build_initial_state, build_laws, smallness_report
from .interface import frak_P, geometry, holder_pw, levelset_metrics
from .output import (
    MARKER_COLUMNS,
    TIME_SERIES_COLUMNS,
    CsvStream,
    load_checkpoint,
    save_checkpoint,
    write_heatmap,
    write_json,
)
from .solver import build_force, cfl_dt, full_step, split_viscosity
from .spectral import SpectralGrid
from .state import FluidState, material_derivative
from .utils import ScenarioConfig, config_hash

logger = logging.getLogger(__name__)

STATUS_COMPLETED = "completed"
STATUS_BLOWUP = "blow-up-monitor"
STATUS_INVALID = "invalid-state"

DAMPING_EXPONENTS = (2.0, 3.0, 5.0)
OPERATOR_TOLERANCE = 1e-11
IDENTITY_TOLERANCE = 1e-10
ZERO_VELOCITY_RATE_TOLERANCE = 0.02
_MONOTONE_SLACK = 1e-12


@dataclass(frozen=True)
class Verdict:
    name: str
    value: float
    threshold: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "threshold": self.threshold,
            "verdict": "PASS" if self.passed else "FAIL",
        }


def _upper(name: str, value: float, threshold: float) -> Verdict:
    return Verdict(name=name, value=value, threshold=threshold, passed=bool(value <= threshold))


@dataclass
class RunSummary:
    """Outcome of a run: status, the last diagnostics record and the acceptance verdicts."""

    status: str
    scenario: str
    record: dict
    verdicts: list[Verdict]
    provenance: dict
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "scenario": self.scenario,
            "message": self.message,
            "record": self.record,
            "verdicts": [v.as_dict() for v in self.verdicts],
            "passed": self.passed,
            "provenance": self.provenance,
            **self.extra,
        }


def _finite_max(values: list[float]) -> float:
    vals = [v for v in values if v is not None and math.isfinite(v)]
    return max(vals) if vals else math.nan


class Simulation:
    """One scenario run writing its CSV streams, checkpoints and summary under ``out_dir``."""

    def __init__(self, cfg: ScenarioConfig, out_dir: Path):
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.rng = np.random.default_rng(cfg.run.seed)
        self.config_hash = config_hash(cfg)
        self.initial: InitialData | None = None
        self.state: FluidState | None = None
        self.smallness: dict | None = None
        self.force = None
        self.laws: ConstitutiveLaws | None = None
        self.nu = None
        self.mu_s = 0.0

        self.ledger = EnergyLedger()
        self.hoff = HoffFunctionals()
        self.theta = ThetaFunctional(cfg.alpha)
        self.window: deque[Snapshot] = deque(maxlen=5)
        self.udots: deque[tuple[Snapshot, np.ndarray]] = deque(maxlen=3)
        self._uddot_started = False
        self.grad_inf_integral = 0.0
        self._last_grad_inf: tuple[float, float] | None = None
        self._last_monotone: tuple[float, ...] | None = None
        self.monotone_violations = 0

        self.records: list[dict] = []
        self.decay_times: list[float] = []
        self.decay_integrals: list[float] = []
        self.decay_norms: dict[float, list[float]] = {p: [] for p in cfg.jump_exponents}
        self.growth: dict[str, list[float]] = {"integral": [], "c_gamma": [], "inv_ell": [], "grad_gamma_holder": []}
        self.rates_ok = True
        self.u_max_seen = 0.0
        self.composite_initial: float | None = None

    # -- setup -------------------------------------------------------------------

    def prepare(self) -> FluidState:
        cfg = self.cfg
        if cfg.run.restart_from:
            grid = SpectralGrid(cfg.grid.n, cfg.grid.length)
            patch = DensityPatch(cfg.patch, grid.L, cfg.laws.rho_ref)
            laws = build_laws(cfg, patch, grid)
            state = load_checkpoint(Path(cfg.run.restart_from).expanduser(), laws)
            if state.grid.n != grid.n or state.grid.L != grid.L:
                raise InvalidStateError(
                    f"checkpoint grid n={state.grid.n} L={state.grid.L:g} does not match the scenario"
                )
            logger.info("Restarted from checkpoint path=%s step=%d t=%.6g", cfg.run.restart_from, state.step, state.t)
        else:
            self.initial = build_initial_state(cfg)
            state = self.initial.state
            self.smallness = smallness_report(self.initial, cfg, self.rng)
            write_json(self.out_dir / "smallness.json", self.smallness)
        self.state = state
        self.laws = state.laws
        self.nu = state.laws.nu_bounds(cfg.laws.nu_resolution)
        self.mu_s, _ = split_viscosity(state.laws, cfg.step)
        self.force = build_force(state.grid, state.laws, cfg.step.force)
        return state

    # -- per-step bookkeeping ----------------------------------------------------------

    def _snapshot(self, state: FluidState) -> Snapshot:
        force = self.force(state.t) if self.force is not None else None
        return Snapshot(t=state.t, u=state.u, rho=state.rho, force=force)

    def _udot(self, i: int) -> np.ndarray:
        """Material derivative of u at window slot ``i`` (one-sided at the ends)."""
        w = list(self.window)
        grid = self.state.grid
        prev = w[i - 1] if i > 0 else None
        nxt = w[i + 1] if i + 1 < len(w) else None
        dt = w[i].t - prev.t if prev is not None else nxt.t - w[i].t
        dt_next = nxt.t - w[i].t if nxt is not None else None
        return material_derivative(
            grid,
            None if prev is None else prev.u,
            w[i].u,
            None if nxt is None else nxt.u,
            dt,
            w[i].u,
            dt_next=dt_next,
            dealias=self.cfg.step.dealias,
        ).value

    def _uddot(self, i: int) -> np.ndarray:
        entries = list(self.udots)
        snap, ud = entries[i]
        prev = entries[i - 1] if i > 0 else None
        nxt = entries[i + 1] if i + 1 < len(entries) else None
        dt = snap.t - prev[0].t if prev is not None else nxt[0].t - snap.t
        dt_next = nxt[0].t - snap.t if nxt is not None else None
        return material_derivative(
            self.state.grid,
            None if prev is None else prev[1],
            ud,
            None if nxt is None else nxt[1],
            dt,
            snap.u,
            dt_next=dt_next,
            dealias=self.cfg.step.dealias,
        ).value

    def _push_udot(self, snap: Snapshot, ud: np.ndarray) -> None:
        grid = self.state.grid
        self.udots.append((snap, ud))
        self.hoff.update(
            snap.t,
            rho_udot_sq=grid.integrate(snap.rho * np.sum(ud * ud, axis=0)),
            grad_udot_sq=grid.l2_norm(grid.grad_vector(ud)) ** 2,
        )
        if len(self.udots) == 2 and not self._uddot_started:
            self._uddot_started = True
            first, _ = self.udots[0]
            self._push_uddot(first, self._uddot(0))
        if len(self.udots) == 3:
            mid, _ = self.udots[1]
            self._push_uddot(mid, self._uddot(1))

    def _push_uddot(self, snap: Snapshot, udd: np.ndarray) -> None:
        self.hoff.update(snap.t, rho_uddot_sq=self.state.grid.integrate(snap.rho * np.sum(udd * udd, axis=0)))

    def _track(self, state: FluidState) -> dict:
        """Energy, Hoff and |grad u|_inf bookkeeping done at every step."""
        grid, laws = state.grid, state.laws
        energy = classical_energy(grid, laws, state.u, state.rho)
        self.ledger.update(state.t, energy)
        g = grid.grad_vector(state.u)
        grad_inf = float(np.max(np.sqrt(np.sum(g * g, axis=(0, 1)))))
        if self._last_grad_inf is not None:
            t0, g0 = self._last_grad_inf
            self.grad_inf_integral += 0.5 * (state.t - t0) * (g0 + grad_inf)
        self._last_grad_inf = (state.t, grad_inf)
        self.hoff.update(state.t, grad_u_sq=grid.l2_norm(g) ** 2)

        self.window.append(self._snapshot(state))
        if len(self.window) == 2 and not self.udots:
            self._push_udot(self.window[0], self._udot(0))
        if len(self.window) >= 3:
            self._push_udot(self.window[-2], self._udot(len(self.window) - 2))

        a1, a2, a3 = self.hoff.values
        current = (a1, a2, a3, self.theta.value)
        if self._last_monotone is not None and any(
            c < p - _MONOTONE_SLACK * max(1.0, abs(p)) for c, p in zip(current, self._last_monotone)
        ):
            self.monotone_violations += 1
            logger.warning("Time-weighted functional decreased at t=%.6g", state.t)
        self._last_monotone = current
        self.u_max_seen = max(self.u_max_seen, float(np.max(np.abs(state.u))))
        return {
            "step": state.step,
            "t": state.t,
            "energy": energy.energy,
            "kinetic": energy.kinetic,
            "potential": energy.potential,
            "dissipation_rate": energy.dissipation_rate,
            "dissipated": self.ledger.dissipated,
            "energy_residual": self.ledger.residual,
            "a1": a1,
            "a2": a2,
            "a3": a3,
            "theta": self.theta.value,
            "theta_invalid": self.theta.invalid,
            "rho_min": float(state.rho.min()),
            "rho_max": float(state.rho.max()),
            "u_max": float(np.max(np.linalg.norm(state.u, axis=0))),
            "grad_u_inf": grad_inf,
            "grad_u_inf_integral": self.grad_inf_integral,
        }

    # -- record-step diagnostics ---------------------------------------------------------

    def _holder_norm(self, evaluate, sup: float, state: FluidState) -> float:
        grid = state.grid
        cutoff = max(0.1 * grid.L, 4.0 * grid.h)
        semis = [
            holder_pw(
                evaluate,
                L=grid.L,
                h=grid.h,
                alpha=self.cfg.alpha,
                cutoff=cutoff,
                side=side,
                classify=state.levelset.classify,
                budget=self.cfg.probes.record_pair_budget,
                rng=self.rng,
            ).value
            for side in ("inside", "outside")
        ]
        return sup + max(semis)

    def _record(self, state: FluidState, row: dict) -> list[dict]:
        cfg, grid, laws = self.cfg, state.grid, state.laws
        started = time.perf_counter()
        alpha = cfg.alpha
        h = grid.h
        r0 = cfg.probes.radius_cells * h
        band = cfg.probes.band_cells * h
        marker_rows: list[dict] = []

        row["viscosity_fluctuation"] = viscosity_fluctuation(laws, state.rho, self.mu_s)
        row["lagrangian_mass"] = lagrangian_mass(state)

        centre, udot = self.udots[-1] if self.udots else (None, None)
        if cfg.diagnostics.identities and centre is not None:
            kwargs = {"mu_s": self.mu_s, "force": centre.force, "curve": state.curve, "band": band}
            kwargs["dealias"] = cfg.step.dealias
            row["flux_residual"] = effective_flux(grid, laws, centre.u, centre.rho, udot, **kwargs).residual
            row["vorticity_residual"] = vorticity_identity(grid, laws, centre.u, centre.rho, udot, **kwargs).residual
        if cfg.diagnostics.hoff2 and len(self.window) == 5:
            row["hoff2_residual"] = hoff2_identity(grid, laws, list(self.window), cfg.step.dealias).residual

        geom = geometry(state.curve, alpha)
        row["curve_length"] = geom.length
        row["c_gamma"] = geom.c_gamma
        row["grad_gamma_holder"] = geom.grad_holder
        metrics = levelset_metrics(state.levelset, state.curve, alpha, rng=self.rng, budget=cfg.probes.record_pair_budget)
        row["ell_phi"] = metrics.ell
        row["frak_p"] = frak_P(geom)

        fields = OneSidedFields(grid, state.u, state.reconstructor, state.levelset)
        composite = None
        if cfg.diagnostics.jumps:
            limits = probe_limits(fields, state.curve, r0, cfg.probes.exponent)
            report = jump_identities(laws, limits, state.curve)
            norms = jump_norms(laws, fields, limits, state.curve, r0, cfg.jump_exponents, cfg.probes.exponent)
            for name in report.residuals:
                row[f"{name}_median"] = report.median(name)
            row["jump_invalid"] = report.invalid_count
            row["f_jump_l4"] = norms.f_norms.get(4.0)
            row["f_jump_inf"] = norms.f_norms.get(math.inf)
            row["grad_jump_inf"] = norms.grad_jump_inf
            row["rate_g_min"], row["rate_g_max"] = norms.g_range
            row["rate_h_min"], row["rate_h_max"] = norms.h_range
            self.rates_ok &= rates_within_bounds(norms, self.nu)
            valid = limits.valid
            composite = interface_composite(
                laws, row["frak_p"], metrics.ell, alpha, limits.rho.plus[valid], limits.rho.minus[valid], self.mu_s
            )
            self.decay_times.append(state.t)
            self.decay_integrals.append(self.grad_inf_integral)
            for p, value in norms.f_norms.items():
                self.decay_norms[p].append(value)
            pts = state.curve.points
            for i in range(state.curve.size):
                marker = {
                    "step": state.step,
                    "t": state.t,
                    "marker": i,
                    "x": pts[i, 0],
                    "y": pts[i, 1],
                    "valid": bool(report.valid[i]),
                    "f_jump": norms.per_marker[i],
                    "extrapolation_error": report.error[i],
                }
                marker.update({name: values[i] for name, values in report.residuals.items()})
                marker_rows.append(marker)
        row["composite"] = composite
        if composite is not None and self.composite_initial is None:
            self.composite_initial = composite

        pressure_pw = None
        if cfg.diagnostics.holder:
            fval_grid = laws.f_of_rho(state.rho)
            f_pw = self._holder_norm(fields.fval, float(np.max(np.abs(fval_grid))), state)
            g = grid.grad_vector(state.u)
            grad_pw = self._holder_norm(
                fields.velocity_gradient, float(np.max(np.sqrt(np.sum(g * g, axis=(0, 1))))), state
            )

            def pressure(points, side=None):
                return laws.P(fields.density(points, side)) - laws.P_ref

            pressure_pw = self._holder_norm(pressure, float(np.max(np.abs(laws.P(state.rho) - laws.P_ref))), state)
            row["theta"] = self.theta.update(state.t, f_pw, grad_pw)
            row["theta_invalid"] = self.theta.invalid

        if self.smallness is not None:
            c0 = self.smallness["c0"]
            total = row["energy"] + row["a1"] + row["a2"] + row["a3"] + math.sqrt(max(row["theta"], 0.0))
            row["energy_constant_ratio"] = total / c0 if c0 > 0 else (0.0 if total == 0 else math.inf)

        rho_udot_l2 = None
        if centre is not None:
            rho_udot_l2 = math.sqrt(grid.integrate(centre.rho * np.sum(udot * udot, axis=0)))
        monitors = blowup_monitors(
            laws,
            state.t,
            state.rho,
            c_gamma=geom.c_gamma,
            grad_gamma_holder=geom.grad_holder,
            u_h1=grid.h1_norm(state.u),
            rho_udot_l2=rho_udot_l2,
            pressure_pw=pressure_pw,
            composite=composite,
            thresholds=cfg.monitors,
        )
        self.growth["integral"].append(self.grad_inf_integral)
        self.growth["c_gamma"].append(geom.c_gamma)
        self.growth["inv_ell"].append(1.0 / metrics.ell)
        self.growth["grad_gamma_holder"].append(geom.grad_holder)
        self.records.append(dict(row))
        logger.info(
            "Record step=%d t=%.6g energy=%.6g residual=%.3e theta=%.4g c_gamma=%.4g elapsed_ms=%.1f",
            state.step,
            state.t,
            row["energy"],
            row["energy_residual"],
            row["theta"],
            geom.c_gamma,
            (time.perf_counter() - started) * 1000.0,
        )
        enforce(monitors)
        return marker_rows

    def _dump(self, state: FluidState) -> None:
        every = self.cfg.run.checkpoint_every
        if not every or state.step % every:
            return
        save_checkpoint(self.out_dir / "checkpoints" / f"step_{state.step:06d}.npz", state, self.config_hash)
        if self.cfg.output.heatmaps:
            grid, laws = state.grid, state.laws
            flux = laws.stiffness(state.rho) * grid.divergence(state.u) - (laws.P(state.rho) - laws.P_ref)
            folder = self.out_dir / "heatmaps"
            write_heatmap(folder / f"rho_{state.step:06d}.png", state.rho)
            write_heatmap(folder / f"flux_{state.step:06d}.png", flux)
            write_heatmap(folder / f"rot_{state.step:06d}.png", grid.rot2(state.u))

    # -- loop --------------------------------------------------------------------------

    def _done(self, state: FluidState) -> bool:
        run = self.cfg.run
        if run.max_steps is not None and state.step >= run.max_steps:
            return True
        return state.t >= run.end_time * (1.0 - 1e-12)

    def run(self) -> RunSummary:
        started = time.perf_counter()
        cfg = self.cfg
        state = self.state if self.state is not None else self.prepare()
        status, message = STATUS_COMPLETED, ""
        extra: dict = {}
        last_row: dict = {}
        series = CsvStream(self.out_dir / "time_series.csv", TIME_SERIES_COLUMNS)
        markers = CsvStream(self.out_dir / "markers.csv", MARKER_COLUMNS)
        try:
            row = self._track(state)
            marker_rows = self._record(state, row)
            series.write(row)
            for m in marker_rows:
                markers.write(m)
            last_row = row
            while not self._done(state):
                dt = min(cfl_dt(state, cfg.step), cfg.run.end_time - state.t)
                state, report = full_step(state, cfg.step, self.force, dt=dt)
                self.state = state
                row = self._track(state)
                row["dt"] = report.dt
                if state.step % cfg.run.record_every == 0 or self._done(state):
                    for m in self._record(state, row):
                        markers.write(m)
                series.write(row)
                last_row = row
                self._dump(state)
        except BlowupError as e:
            status, message = STATUS_BLOWUP, str(e)
            extra["monitor_report"] = e.report
            logger.error("Run halted by blow-up monitor: %s", e)
        except (InvalidStateError, InterfaceError, LawError) as e:
            status, message = STATUS_INVALID, str(e)
            logger.error("Run halted with invalid state: %s", e)
        finally:
            series.close()
            markers.close()

        extra.update(self._extras())
        summary = RunSummary(
            status=status,
            scenario=cfg.name,
            record=last_row,
            verdicts=self.verdicts(),
            provenance={
                "config_hash": self.config_hash,
                "version": __version__,
                "seed": cfg.run.seed,
                "elapsed_s": time.perf_counter() - started,
            },
            message=message,
            extra=extra,
        )
        write_json(self.out_dir / "summary.json", summary.as_dict())
        logger.info(
            "Run finished scenario=%s status=%s steps=%d t=%.6g passed=%s",
            cfg.name,
            status,
            state.step,
            state.t,
            summary.passed,
        )
        return summary

    # -- verdicts ----------------------------------------------------------------------

    def decay_fits(self) -> list:
        if not self.cfg.diagnostics.jumps:
            return []
        fits = []
        for p, norms in self.decay_norms.items():
            try:
                fits.append(
                    jump_decay_fit(
                        np.array(self.decay_times), np.array(norms), np.array(self.decay_integrals), self.nu, p
                    )
                )
            except DiagnosticsError as e:
                logger.info("Decay fit skipped for p=%s: %s", p, e)
        return fits

    def _extras(self) -> dict:
        laws = self.laws
        extra: dict = {}
        if laws is not None:
            extra["damping_ratio"] = {str(int(l_exp)): laws.damping_ratio(l_exp) for l_exp in DAMPING_EXPONENTS}
            extra["nu_bounds"] = {"low": self.nu.low, "high": self.nu.high}
        if self.state is not None and laws is not None:
            extra["pressure_damping"] = {
                str(int(l_exp)): pressure_damping(self.state.grid, laws, self.state.rho, l_exp).damping
                for l_exp in DAMPING_EXPONENTS
            }
        growth = self.growth
        extra["growth"] = [
            {"name": c.name, "constant": c.constant, "worst_increase": c.worst_increase, "passed": c.passed}
            for c in (
                growth_law(name, np.array(growth["integral"]), np.array(growth[name]))
                for name in ("c_gamma", "inv_ell", "grad_gamma_holder")
            )
        ]
        extra["decay"] = [
            {"p": fit.exponent, "fitted_rate": fit.fitted_rate, "predicted_rate": fit.predicted_rate, "samples": fit.samples}
            for fit in self.decay_fits()
        ]
        extra["composite_initial"] = self.composite_initial
        if self.smallness is not None:
            extra["c0"] = self.smallness["c0"]
        return extra

    def verdicts(self) -> list[Verdict]:
        """Verdicts for the checks that actually ran."""
        checks = self.cfg.checks
        diag = self.cfg.diagnostics
        out = [_upper("energy", self.ledger.relative_residual, checks.energy)]
        out.append(_upper("monotone_functionals", float(self.monotone_violations), 0.0))
        recs = self.records

        def worst(key: str) -> float:
            return _finite_max([r.get(key) for r in recs])

        if recs:
            out.append(_upper("lagrangian_mass", worst("lagrangian_mass"), checks.lagrangian_mass))
        flux = worst("flux_residual")
        if diag.identities and not math.isnan(flux):
            out.append(_upper("flux", flux, checks.flux))
            out.append(_upper("vorticity", worst("vorticity_residual"), checks.vorticity))
        hoff2 = worst("hoff2_residual")
        if diag.hoff2 and not math.isnan(hoff2):
            out.append(_upper("hoff2", hoff2, checks.hoff2))
        if diag.jumps and recs:
            for name in ("stress_normal", "flux_jump", "vorticity_jump"):
                value = worst(f"{name}_median")
                if not math.isnan(value):
                    out.append(_upper(f"jump_{name}", value, checks.jumps))
            out.append(Verdict(name="jump_rates", value=float(not self.rates_ok), threshold=0.0, passed=self.rates_ok))
        for fit in self.decay_fits():
            out.append(
                Verdict(
                    name=f"decay_p{fit.exponent:g}",
                    value=fit.fitted_rate,
                    threshold=fit.predicted_rate,
                    passed=fit.passed,
                )
            )
        return out


# -- drivers -----------------------------------------------------------------------------


def run(cfg: ScenarioConfig, out_dir: Path) -> RunSummary:
    return Simulation(cfg, out_dir).run()


def _symbol_error(grid: SpectralGrid, out: np.ndarray, expected_hat: np.ndarray) -> float:
    got = grid.to_fourier(out)
    scale = max(float(np.max(np.abs(expected_hat))), 1e-300)
    return float(np.max(np.abs(got - expected_hat))) / scale


def _pair_symbol(grid: SpectralGrid, j: int, k: int) -> np.ndarray:
    return grid.k[j] ** 2 if j == k else grid.k_odd[j] * grid.k_odd[k]


def verify_operators(n: int = 64, seed: int = 0, samples: int = 100) -> dict:
    """Check every spectral operator against its multiplier, then K(Du) = -2 div u and K'(Du) = -rot u."""
    started = time.perf_counter()
    grid = SpectralGrid(n, 2.0 * math.pi)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((n, n))
    v = rng.standard_normal((2, n, n))
    m = rng.standard_normal((2, 2, n, n))
    m = 0.5 * (m + m.transpose(1, 0, 2, 3))
    f_hat, v_hat, m_hat = grid.to_fourier(f), grid.to_fourier(v), grid.to_fourier(m)
    ko, inv = grid.k_odd, grid.inv_k2
    p00, p01, p11 = _pair_symbol(grid, 0, 0), _pair_symbol(grid, 0, 1), _pair_symbol(grid, 1, 1)

    errors = {
        "gradient": _symbol_error(grid, grid.gradient(f), 1j * ko * f_hat),
        "divergence": _symbol_error(grid, grid.divergence(v), 1j * (ko[0] * v_hat[0] + ko[1] * v_hat[1])),
        "rot2": _symbol_error(grid, grid.rot2(v), 1j * (ko[0] * v_hat[1] - ko[1] * v_hat[0])),
        "laplacian": _symbol_error(grid, grid.laplacian(f), -grid.k2 * f_hat),
        "inv_laplacian": _symbol_error(grid, grid.inv_laplacian(f), inv * f_hat),
        "riesz_11": _symbol_error(grid, grid.riesz2(f, 0, 0), p00 * inv * f_hat),
        "riesz_12": _symbol_error(grid, grid.riesz2(f, 0, 1), p01 * inv * f_hat),
        "riesz_22": _symbol_error(grid, grid.riesz2(f, 1, 1), p11 * inv * f_hat),
        "K": _symbol_error(
            grid, grid.K_op(m), -2.0 * inv * (p00 * m_hat[0, 0] + 2.0 * p01 * m_hat[0, 1] + p11 * m_hat[1, 1])
        ),
        "K_prime": _symbol_error(
            grid, grid.Kp_op(m), 2.0 * inv * (p01 * (m_hat[0, 0] - m_hat[1, 1]) + (p11 - p00) * m_hat[0, 1])
        ),
    }
    checks = [_upper(f"symbol_{name}", err, OPERATOR_TOLERANCE) for name, err in errors.items()]

    band = np.abs(grid.mode_numbers) < n // 2
    keep = np.logical_and.outer(band, band)
    worst_k = worst_kp = 0.0
    for _ in range(samples):
        coeffs = rng.standard_normal((2, n, n)) + 1j * rng.standard_normal((2, n, n))
        u = grid.to_physical(coeffs * keep)
        du = grid.sym_grad(u)
        div, rot = grid.divergence(u), grid.rot2(u)
        div0, rot0 = div - div.mean(), rot - rot.mean()
        worst_k = max(worst_k, float(np.max(np.abs(grid.K_op(du) + 2.0 * div0))) / max(float(np.max(np.abs(div0))), 1e-300))
        worst_kp = max(
            worst_kp, float(np.max(np.abs(grid.Kp_op(du) + rot0))) / max(float(np.max(np.abs(rot0))), 1e-300)
        )
    checks.append(_upper("identity_K_div", worst_k, IDENTITY_TOLERANCE))
    checks.append(_upper("identity_K_prime_rot", worst_kp, IDENTITY_TOLERANCE))
    passed = all(c.passed for c in checks)
    logger.info(
        "Operator verification n=%d samples=%d passed=%s elapsed_ms=%.1f",
        n,
        samples,
        passed,
        (time.perf_counter() - started) * 1000.0,
    )
    return {"n": n, "seed": seed, "checks": [c.as_dict() for c in checks], "passed": passed}


IDENTITY_VERDICTS = (
    "energy",
    "lagrangian_mass",
    "flux",
    "vorticity",
    "hoff2",
    "jump_stress_normal",
    "jump_flux_jump",
    "jump_vorticity_jump",
    "jump_rates",
)


def verify_identities(cfg: ScenarioConfig, out_dir: Path) -> tuple[RunSummary, dict]:
    """Short run with every identity diagnostic on; the report keeps only identity verdicts."""
    cfg = cfg.model_copy(
        update={
            "diagnostics": cfg.diagnostics.model_copy(update={"identities": True, "jumps": True, "hoff2": True})
        }
    )
    summary = run(cfg, out_dir)
    checks = [v for v in summary.verdicts if v.name in IDENTITY_VERDICTS]
    report = {
        "scenario": cfg.name,
        "status": summary.status,
        "checks": [c.as_dict() for c in checks],
        "passed": summary.status == STATUS_COMPLETED and all(c.passed for c in checks),
    }
    write_json(Path(out_dir) / "identities.json", report)
    return summary, report


def decay_study(cfg: ScenarioConfig, out_dir: Path, exponents: list | None = None) -> tuple[RunSummary, dict]:
    """Run once and fit the decay rate of the f-jump in every requested L^p(C) norm.

    With the velocity identically zero the fitted rate must also match -nu_low.
    """
    if exponents:
        cfg = cfg.model_copy(update={"run": cfg.run.model_copy(update={"jump_norms": list(exponents)})})
    cfg = cfg.model_copy(update={"diagnostics": cfg.diagnostics.model_copy(update={"jumps": True})})
    sim = Simulation(cfg, out_dir)
    summary = sim.run()
    fits = sim.decay_fits()
    checks = [
        Verdict(name=f"bound_p{fit.exponent:g}", value=fit.fitted_rate, threshold=fit.predicted_rate, passed=fit.passed)
        for fit in fits
    ]
    at_rest = sim.u_max_seen == 0.0
    if at_rest and sim.nu is not None:
        target = -sim.nu.low
        for fit in fits:
            err = abs(fit.fitted_rate - target) / abs(target) if target else abs(fit.fitted_rate)
            checks.append(_upper(f"rate_p{fit.exponent:g}", err, ZERO_VELOCITY_RATE_TOLERANCE))
    report = {
        "scenario": cfg.name,
        "status": summary.status,
        "at_rest": at_rest,
        "nu_low": None if sim.nu is None else sim.nu.low,
        "fits": [
            {"p": f.exponent, "fitted_rate": f.fitted_rate, "predicted_rate": f.predicted_rate, "samples": f.samples}
            for f in fits
        ],
        "checks": [c.as_dict() for c in checks],
        "passed": summary.status == STATUS_COMPLETED and bool(checks) and all(c.passed for c in checks),
    }
    write_json(Path(out_dir) / "decay.json", report)
    return summary, report


def init_only(cfg: ScenarioConfig, out_dir: Path) -> dict:
    """Build the initial state, dump it as a checkpoint and write the smallness report."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(cfg.run.seed)
    initial = build_initial_state(cfg)
    report = smallness_report(initial, cfg, rng)
    path = save_checkpoint(out_dir / "initial.npz", initial.state, config_hash(cfg))
    report["checkpoint"] = str(path)
    report["provenance"] = {"config_hash": config_hash(cfg), "version": __version__, "seed": cfg.run.seed}
    write_json(out_dir / "smallness.json", report)
    return report
