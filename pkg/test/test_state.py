import math

import numpy as np
import pytest
from patchflow.sim.errors import InvalidStateError
from patchflow.sim.interface import LevelSet
from patchflow.sim.state import (
    DensityReconstructor,
    FlowSampler,
    ParticleCloud,
    density_on_grid,
    jacobian_update,
    material_derivative,
)


def _lattice(grid, factor=2):
    hp = grid.h / factor
    x = (np.arange(grid.n * factor) + 0.5) * hp
    return np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2), hp


def _cloud(grid, fval, inside):
    pts, hp = _lattice(grid)
    size = len(pts)
    return ParticleCloud(
        labels=pts.copy(),
        x=pts,
        fval=np.broadcast_to(fval(pts) if callable(fval) else fval, (size,)).astype(float),
        inside=np.broadcast_to(inside(pts) if callable(inside) else inside, (size,)).astype(bool),
        log_j=np.zeros(size),
        rho0=np.ones(size),
        volume=hp * hp,
    )


def _disc(points):
    return np.hypot(points[:, 0] - math.pi, points[:, 1] - math.pi) < 1.5


def test_particle_cloud_properties(grid):
    cloud = _cloud(grid, 0.0, False)
    assert cloud.size == (2 * grid.n) ** 2
    assert cloud.total_mass == pytest.approx(grid.L**2)
    assert np.all(cloud.jacobian == 1.0)
    shifted = ParticleCloud(**{**cloud.__dict__, "x": cloud.x + grid.L})
    assert np.allclose(shifted.wrapped(grid.L), cloud.x)


def test_reconstruction_is_exact_for_linear_f(grid, gamma_laws):
    cloud = _cloud(grid, lambda p: 0.1 * (p[:, 0] - math.pi) - 0.05 * (p[:, 1] - math.pi), False)
    recon = DensityReconstructor(grid, cloud, gamma_laws)
    q = np.array([[2.0, 2.5], [3.3, 4.1], [math.pi, math.pi]])
    expected = 0.1 * (q[:, 0] - math.pi) - 0.05 * (q[:, 1] - math.pi)
    assert np.allclose(recon.fit(q, False), expected, atol=1e-10)


def test_reconstruction_never_mixes_sides(grid, gamma_laws):
    cloud = _cloud(grid, lambda p: np.where(_disc(p), 0.4, -0.2), _disc)
    recon = DensityReconstructor(grid, cloud, gamma_laws)
    # a point just inside the disc whose 3h ball reaches outside particles
    q = np.array([[math.pi + 1.4, math.pi], [math.pi + 1.6, math.pi]])
    assert np.allclose(recon.fit(q, np.array([True, False])), [0.4, -0.2], atol=1e-12)
    rho = recon.density_at(q, np.array([True, False]))
    assert np.allclose(rho, gamma_laws.f_inverse(np.array([0.4, -0.2])))


def test_reconstruction_reports_depletion(grid, gamma_laws):
    recon = DensityReconstructor(grid, _cloud(grid, 0.0, False), gamma_laws)
    with pytest.raises(InvalidStateError, match="depletion"):
        recon.fit(np.array([[1.0, 1.0]]), True)


def test_density_on_grid_of_reference_state(grid, gamma_laws):
    x, y = grid.coords
    levelset = LevelSet(grid, 1.5 - np.hypot(x - math.pi, y - math.pi))
    rho = density_on_grid(_cloud(grid, 0.0, _disc), levelset, gamma_laws)
    assert rho.shape == (grid.n, grid.n)
    assert np.allclose(rho, 1.0)


def test_material_derivative_of_linear_in_time_field(grid):
    rate = np.stack([np.full((grid.n, grid.n), 0.3), np.full((grid.n, grid.n), -0.1)])
    v_curr = np.zeros_like(rate)
    u = np.zeros_like(rate)
    central = material_derivative(grid, v_curr - 0.1 * rate, v_curr, v_curr + 0.25 * rate, 0.1, u, dt_next=0.25)
    assert central.order == 2
    assert np.allclose(central.value, rate)
    forward = material_derivative(grid, None, v_curr, v_curr + 0.1 * rate, 0.1, u)
    assert forward.order == 1
    assert np.allclose(forward.value, rate)


def test_material_derivative_central_is_exact_for_quadratics(grid):
    ones = np.ones((2, grid.n, grid.n))
    a, b = 0.1, 0.3
    u = np.zeros_like(ones)
    v_prev, v_next = ones * (-a) ** 2, ones * b**2
    result = material_derivative(grid, v_prev, 0 * ones, v_next, a, u, dt_next=b)
    assert np.allclose(result.value, 0.0, atol=1e-12)


def test_material_derivative_includes_advection(grid):
    x, _ = grid.coords
    v = np.stack([np.sin(x), np.zeros_like(x)])
    u = np.stack([np.ones_like(x), np.zeros_like(x)])
    result = material_derivative(grid, v, v, v, 0.1, u)
    assert np.allclose(result.value[0], np.cos(x), atol=1e-12)
    assert np.allclose(result.value[1], 0.0, atol=1e-12)


def test_material_derivative_needs_two_snapshots(grid):
    v = np.zeros((2, grid.n, grid.n))
    with pytest.raises(InvalidStateError, match="two snapshots"):
        material_derivative(grid, None, v, None, 0.1, v)


def test_flow_sampler_extrapolates_in_time(grid):
    u_prev = np.zeros((2, grid.n, grid.n))
    u = np.full((2, grid.n, grid.n), 0.5)
    flow = FlowSampler(grid, u, u_prev, ratio=2.0)
    pts = np.array([[1.0, 2.0]])
    assert np.allclose(flow.velocity(pts, 0.0), 0.5)
    assert np.allclose(flow(pts, 1.0), 1.5)
    assert not flow.is_zero
    assert FlowSampler(grid, u_prev).is_zero


def test_jacobian_update_zero_flow_is_identity(grid):
    cloud = _cloud(grid, 0.0, False)
    flow = FlowSampler(grid, np.zeros((2, grid.n, grid.n)))
    assert jacobian_update(cloud, flow, 0.1) is cloud


def test_jacobian_matches_one_dimensional_compression(grid):
    x, _ = grid.coords
    eps = 0.5
    u = np.stack([eps * np.sin(x), np.zeros_like(x)])
    pts = np.array([[0.7, 1.0], [2.0, 3.0], [4.0, 0.5], [5.5, 5.5]])
    cloud = ParticleCloud(
        labels=pts.copy(), x=pts.copy(), fval=np.zeros(4), inside=np.zeros(4, bool),
        log_j=np.zeros(4), rho0=np.ones(4), volume=1.0,
    )
    flow = FlowSampler(grid, u)
    for _ in range(20):
        cloud = jacobian_update(cloud, flow, 0.02)
    # dX/dt = eps sin X gives J = sin X / sin x0
    expected = np.sin(cloud.x[:, 0]) / np.sin(pts[:, 0])
    assert np.allclose(cloud.jacobian, expected, rtol=1e-3)
    assert np.allclose(cloud.x[:, 1], pts[:, 1])
