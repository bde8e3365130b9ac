"""Run outputs: CSV streams, JSON summaries, grayscale heatmaps and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from .constitutive import ConstitutiveLaws
from .errors import CheckpointError
from .interface import InterfaceCurve, LevelSet
from .spectral import SpectralGrid
from .state import FluidState, ParticleCloud

try:
    from PIL import Image
except Exception:  # pragma: no cover
    Image = None  # type: ignore[assignment]

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "PATCHFLOW-CHECKPOINT"
CHECKPOINT_SCHEMA = 1

TIME_SERIES_COLUMNS = [
    "step",
    "t",
    "dt",
    "energy",
    "kinetic",
    "potential",
    "dissipation_rate",
    "dissipated",
    "energy_residual",
    "a1",
    "a2",
    "a3",
    "theta",
    "theta_invalid",
    "viscosity_fluctuation",
    "rho_min",
    "rho_max",
    "u_max",
    "grad_u_inf",
    "grad_u_inf_integral",
    "flux_residual",
    "vorticity_residual",
    "stress_normal_median",
    "flux_jump_median",
    "vorticity_jump_median",
    "divergence_jump_median",
    "rotation_jump_median",
    "rank_one_median",
    "tangential_gradient_median",
    "jump_invalid",
    "lagrangian_mass",
    "hoff2_residual",
    "f_jump_l4",
    "f_jump_inf",
    "grad_jump_inf",
    "rate_g_min",
    "rate_g_max",
    "rate_h_min",
    "rate_h_max",
    "curve_length",
    "c_gamma",
    "grad_gamma_holder",
    "ell_phi",
    "frak_p",
    "composite",
    "energy_constant_ratio",
]

MARKER_COLUMNS = [
    "step",
    "t",
    "marker",
    "x",
    "y",
    "valid",
    "f_jump",
    "stress_normal",
    "tangential_gradient",
    "flux_jump",
    "vorticity_jump",
    "divergence_jump",
    "rotation_jump",
    "rank_one",
    "extrapolation_error",
]


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    return f"{value:.17g}"


def to_jsonable(value):
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


def write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(payload), indent=4, sort_keys=True) + "\n", encoding="utf-8")
    return path


class CsvStream:
    """Append-only CSV writer with a fixed header."""

    def __init__(self, path: Path, columns: list[str]):
        self.path = Path(path)
        self.columns = columns
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open("w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._handle)
        self._writer.writerow(columns)

    def write(self, row: dict) -> None:
        unknown = set(row) - set(self.columns)
        if unknown:
            raise KeyError(f"undocumented columns: {sorted(unknown)}")
        self._writer.writerow([_format(row.get(c)) for c in self.columns])
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> CsvStream:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _require_pillow():
    if Image is None:
        raise RuntimeError("Pillow is required for heatmap output")
    return Image


def write_heatmap(path: Path, field: np.ndarray) -> Path:
    """Write ``field`` as an 8-bit grayscale PNG, x1 to the right and x2 upward."""
    image_mod = _require_pillow()
    arr = np.asarray(field, dtype=float)
    lo, hi = float(np.min(arr)), float(np.max(arr))
    scaled = np.zeros_like(arr) if hi <= lo else (arr - lo) / (hi - lo)
    pixels = np.flipud((scaled * 255.0).round().astype(np.uint8).T)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image_mod.fromarray(np.ascontiguousarray(pixels)).save(path)
    return path


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(path: Path, state: FluidState, config_hash: str = "") -> Path:
    """Dump ``state`` to a compressed .npz archive tagged with magic and schema version."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    p = state.particles
    arrays = {
        "magic": np.array(CHECKPOINT_MAGIC),
        "schema_version": np.array(CHECKPOINT_SCHEMA),
        "config_hash": np.array(config_hash),
        "t": np.array(state.t),
        "step": np.array(state.step),
        "n": np.array(state.grid.n),
        "L": np.array(state.grid.L),
        "u": state.u,
        "rho": state.rho,
        "phi": state.levelset.phi,
        "curve_points": state.curve.points,
        "curve_s": state.curve.s,
        "curve_period": np.array(state.curve.period),
        "labels": p.labels,
        "x": p.x,
        "fval": p.fval,
        "inside": p.inside,
        "log_j": p.log_j,
        "rho0": p.rho0,
        "volume": np.array(p.volume),
    }
    if state.u_prev is not None:
        arrays["u_prev"] = state.u_prev
        arrays["dt_prev"] = np.array(state.dt_prev)
    if state.explicit_prev is not None:
        arrays["explicit_prev"] = state.explicit_prev
    with path.open("wb") as handle:
        np.savez_compressed(handle, **arrays)
    logger.info("Checkpoint written path=%s step=%d t=%.6g", path, state.step, state.t)
    return path


def load_checkpoint(path: Path, laws: ConstitutiveLaws) -> FluidState:
    """Restore a state saved by :func:`save_checkpoint`."""
    path = Path(path)
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    with data:
        if "magic" not in data or str(data["magic"]) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a patchflow checkpoint")
        version = int(data["schema_version"])
        if version != CHECKPOINT_SCHEMA:
            raise CheckpointError(f"checkpoint schema {version} is not supported (expected {CHECKPOINT_SCHEMA})")
        grid = SpectralGrid(int(data["n"]), float(data["L"]))
        particles = ParticleCloud(
            labels=data["labels"],
            x=data["x"],
            fval=data["fval"],
            inside=data["inside"],
            log_j=data["log_j"],
            rho0=data["rho0"],
            volume=float(data["volume"]),
        )
        curve = InterfaceCurve(
            points=data["curve_points"], s=data["curve_s"], period=float(data["curve_period"])
        )
        has_prev = "u_prev" in data
        return FluidState(
            t=float(data["t"]),
            step=int(data["step"]),
            grid=grid,
            laws=laws,
            u=data["u"],
            particles=particles,
            curve=curve,
            levelset=LevelSet(grid, data["phi"]),
            rho=data["rho"],
            u_prev=data["u_prev"] if has_prev else None,
            dt_prev=float(data["dt_prev"]) if has_prev else None,
            explicit_prev=data["explicit_prev"] if "explicit_prev" in data else None,
        )


def checkpoint_hash(path: Path) -> str:
    with np.load(Path(path), allow_pickle=False) as data:
        return str(data["config_hash"])
