import math

import numpy as np
import pytest
from patchflow.sim.errors import InterfaceError
from patchflow.sim.initdata import (
    DensityPatch,
    build_initial_state,
    mollifier,
    mollify,
    seed_particles,
    smallness_report,
    solve_initial_velocity,
    target_velocity,
)
from patchflow.sim.spectral import SpectralGrid
from patchflow.sim.utils import PatchConfig, VelocityConfig

L = 16.0
CENTER = np.array([8.0, 8.0])


def _patch(**kwargs):
    return DensityPatch(PatchConfig(**kwargs), L, 1.0)


def test_circle_patch_phi_and_radius():
    patch = _patch(radius=3.0)
    assert patch.phi(CENTER) == pytest.approx(1.0)
    assert patch.phi(CENTER + [3.0, 0.0]) == pytest.approx(0.0)
    assert patch.phi(CENTER + [0.0, 5.0]) < 0
    assert np.allclose(patch.radius(np.linspace(0, 6, 5)), 3.0)


def test_ellipse_radius_at_axes():
    patch = _patch(shape="ellipse", **{"semi-axes": (3.0, 2.0)})
    assert patch.radius(np.array([0.0, math.pi / 2])) == pytest.approx([3.0, 2.0])


def test_star_patch_radius_and_vanishing_harmonics():
    patch = _patch(shape="star", radius=2.0, harmonics=[{"mode": 3, "amplitude": 0.2}])
    assert patch.radius(np.array([0.0, math.pi / 3])) == pytest.approx([2.4, 1.6])
    with pytest.raises(InterfaceError, match="radius would vanish"):
        _patch(shape="star", harmonics=[{"mode": 2, "amplitude": 0.6}, {"mode": 3, "amplitude": -0.5}])


def test_patch_curve_lies_on_the_boundary():
    patch = _patch(shape="ellipse", **{"semi-axes": (3.0, 2.0)})
    curve = patch.curve(256)
    assert curve.size == 256
    assert curve.signed_area > 0
    assert np.max(np.abs(patch.phi(curve.points))) < 1e-3
    assert curve.spacing_ratio < 1.05


def test_density_profiles():
    patch = _patch(radius=2.0, inside={"base": 1.1}, outside={"base": 1.05})
    pts = np.array([CENTER, CENTER + [2.5, 0.0], CENTER + [2.0 + L / 4 + 0.5, 0.0]])
    rho = patch.density(pts)
    assert rho[0] == pytest.approx(1.1)
    assert 1.0 < rho[1] < 1.05
    assert rho[2] == pytest.approx(1.0)
    assert patch.density(CENTER[None], "outside")[0] == pytest.approx(1.05)


def test_cusp_profile_is_holder_at_anchor():
    patch = _patch(radius=2.0, alpha=0.5, inside={"base": 1.0, "cusp": 0.2})
    anchor = patch.boundary_point(0.0)
    assert np.allclose(anchor, CENTER + [2.0, 0.0])
    near = anchor - [0.04, 0.0]
    assert patch.density(near[None])[0] == pytest.approx(1.0 + 0.2 * 0.2)


def test_classify_marks_the_boundary_layer():
    patch = _patch(radius=2.0)
    pts = np.array([CENTER, CENTER + [2.05, 0.0], CENTER + [4.0, 0.0]])
    assert patch.classify(pts, 0.1).tolist() == [1, 0, -1]


def test_target_velocity(grid):
    center = np.array([math.pi, math.pi])
    assert not np.any(target_velocity(grid, VelocityConfig(), center))
    vortex = target_velocity(grid, VelocityConfig(vortices=[{"amplitude": 0.1, "width": 1.0}]), center)
    node = grid.n // 2
    assert np.allclose(vortex[:, node, node], 0.0)
    # counter-clockwise swirl for positive amplitude
    assert vortex[1, node + 3, node] > 0
    assert vortex[0, node, node + 3] < 0
    source = target_velocity(grid, VelocityConfig(potentials=[{"amplitude": -0.1, "width": 1.0}]), center)
    assert source[0, node + 3, node] > 0


def test_mollifier_has_unit_integral(grid):
    kernel = mollifier(grid, 0.8)
    assert grid.integrate(kernel) == pytest.approx(1.0)
    assert np.allclose(mollify(grid, kernel, np.full((grid.n, grid.n), 3.0)), 3.0)


def test_zero_right_hand_side_gives_zero_velocity(grid, gamma_laws):
    rho = np.ones((grid.n, grid.n))
    result = solve_initial_velocity(grid, gamma_laws, rho, np.zeros((2, grid.n, grid.n)), 0.1)
    assert not np.any(result.u)
    assert result.iterations == 0
    assert result.c_delta == 0.0


def test_elliptic_solve_converges(grid, gamma_laws):
    x, y = grid.coords
    rho = 1.0 + 0.05 * np.cos(x) * np.cos(y)
    u0 = np.stack([0.1 * np.sin(y), 0.05 * np.sin(x)])
    result = solve_initial_velocity(grid, gamma_laws, rho, u0, 0.3)
    assert result.residual < 1e-8
    assert result.iterations > 0
    assert result.c_delta > 0
    assert np.all(np.isfinite(result.u))
    assert result.bound_ratio >= 0


def test_regularised_velocity_approaches_data_as_delta_shrinks(gamma_laws):
    grid = SpectralGrid(32, 1.0)
    x, y = grid.coords
    rho = np.ones((grid.n, grid.n))
    u0 = np.stack([0.1 * np.sin(2 * math.pi * y), 0.05 * np.sin(2 * math.pi * x)])
    errors, costs = [], []
    for delta in (0.2, 0.1, 0.05):
        result = solve_initial_velocity(grid, gamma_laws, rho, u0, delta)
        assert result.residual < 1e-8
        errors.append(grid.h1_norm(result.u - u0))
        costs.append(result.c_delta)
    assert errors[0] > errors[1] > errors[2] > 0
    assert costs[0] > costs[1] > costs[2]


def test_seed_particles(grid, gamma_laws):
    patch = DensityPatch(PatchConfig(radius=1.0, inside={"base": 1.2}), grid.L, 1.0)
    cloud = seed_particles(grid, patch, gamma_laws, 2)
    assert cloud.size == (2 * grid.n) ** 2
    assert cloud.volume == pytest.approx((grid.h / 2) ** 2)
    assert np.array_equal(cloud.inside, patch.phi(cloud.x) > 0)
    assert np.allclose(cloud.fval[cloud.inside], gamma_laws.f_of_rho(1.2))
    assert np.allclose(cloud.fval[~cloud.inside], 0.0)


def test_constant_state_has_zero_smallness(tiny_config):
    cfg = tiny_config()
    initial = build_initial_state(cfg)
    assert not np.any(initial.state.u)
    assert initial.velocity.iterations == 0
    report = smallness_report(initial, cfg)
    assert report["c0"] == 0.0
    assert report["composite"] == 0.0
    assert report["valid_markers"] > 0
    assert report["initial_velocity"]["iterations"] == 0


def test_patch_jump_enters_smallness(tiny_config):
    cfg = tiny_config(patch={"inside": {"base": 1.1}})
    initial = build_initial_state(cfg)
    report = smallness_report(initial, cfg)
    assert report["terms"]["rho_jump_inf"] == pytest.approx(0.1, rel=1e-6)
    assert report["c0"] > report["terms"]["rho_l2_sq"] > 0
    assert report["pairs_used"]["inside"] > 0


def test_target_mode_skips_the_solve(tiny_config):
    cfg = tiny_config(velocity={"mode": "target", "vortices": [{"amplitude": 0.05, "width": 1.5}]})
    initial = build_initial_state(cfg)
    assert initial.velocity is None
    assert np.array_equal(initial.state.u, initial.target)
    assert "initial_velocity" not in smallness_report(initial, cfg)
