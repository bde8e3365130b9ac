import json
import logging
import math

import numpy as np
import pytest
from patchflow.sim.constitutive import ConstitutiveLaws
from patchflow.sim.spectral import SpectralGrid
from patchflow.sim.utils import LawPreset, parse_scenario


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: refinement sweeps and long runs")


@pytest.fixture(autouse=True)
def isolate_env(monkeypatch):
    for name in ("PATCHFLOW_LOG_LEVEL", "PATCHFLOW_LOG_PATH", "PATCHFLOW_OUT_DIR"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def restore_root_logging():
    root = logging.getLogger()
    handlers = list(root.handlers)
    level = root.level
    yield root
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)


@pytest.fixture
def grid():
    return SpectralGrid(32, 2.0 * math.pi)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gamma_laws():
    return ConstitutiveLaws.from_preset(LawPreset(mu=1.0, b=0.5), density_range=(0.9, 1.2))


@pytest.fixture
def affine_laws():
    return ConstitutiveLaws.from_preset(
        LawPreset(viscosity="affine", mu=1.0, epsilon=1.0, b=0.5), density_range=(0.9, 1.2)
    )


@pytest.fixture
def proportional_laws():
    return ConstitutiveLaws.from_preset(
        LawPreset(pressure="proportional", a=1.0, kappa=1.0, mu=1.0, b=0.0), density_range=(0.9, 1.3)
    )


def small_scenario(tmp_path, **sections) -> dict:
    """A coarse scenario that runs in seconds."""
    data = {
        "name": "tiny",
        "grid": {"n": 32, "L": 16.0, "lattice-factor": 2, "markers": 64},
        "laws": {"pressure": "gamma", "a": 1.0, "gamma": 1.4, "mu": 1.0, "b": 0.5, "rho-ref": 1.0},
        "patch": {"shape": "circle", "radius": 4.0, "inside": {"base": 1.0}},
        "velocity": {},
        "step": {"adaptive": False, "dt": 0.01},
        "run": {"end-time": 0.05, "record-every": 2, "seed": 0},
        "probes": {"pair-budget": 500, "record-pair-budget": 200},
        "output": {"directory": str(tmp_path / "out"), "log-file": ""},
    }
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return data


@pytest.fixture
def scenario_file(tmp_path):
    def write(**sections):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(small_scenario(tmp_path, **sections), indent=4), encoding="utf-8")
        return path

    return write


@pytest.fixture
def tiny_config(tmp_path):
    def build(**sections):
        return parse_scenario(small_scenario(tmp_path, **sections))

    return build
