import math

import numpy as np
import pytest
from patchflow.sim.errors import FieldError
from patchflow.sim.spectral import SpectralGrid


def _trig_field(grid):
    x, y = grid.coords
    return np.sin(2 * x) * np.cos(3 * y)


def test_grid_rejects_bad_sizes():
    with pytest.raises(FieldError, match="power of two"):
        SpectralGrid(48, 1.0)
    with pytest.raises(FieldError, match="positive"):
        SpectralGrid(32, 0.0)


def test_gradient_and_laplacian_of_trig_field(grid):
    x, y = grid.coords
    f = _trig_field(grid)
    g = grid.gradient(f)
    assert np.allclose(g[0], 2 * np.cos(2 * x) * np.cos(3 * y), atol=1e-12)
    assert np.allclose(g[1], -3 * np.sin(2 * x) * np.sin(3 * y), atol=1e-12)
    assert np.allclose(grid.laplacian(f), -13 * f, atol=1e-11)


def test_inverse_laplacian_removes_mean(grid):
    f = _trig_field(grid) + 5.0
    g = grid.inv_laplacian(f)
    assert abs(g.mean()) < 1e-14
    assert np.allclose(-grid.laplacian(g), f - 5.0, atol=1e-12)


def test_divergence_and_rot_of_rotation_field(grid):
    x, y = grid.coords
    v = np.stack([-np.sin(y), np.sin(x)])
    assert np.allclose(grid.divergence(v), 0.0, atol=1e-12)
    assert np.allclose(grid.rot2(v), np.cos(x) + np.cos(y), atol=1e-12)


def test_grad_vector_layout(grid):
    x, y = grid.coords
    v = np.stack([np.sin(y), np.zeros_like(x)])
    g = grid.grad_vector(v)
    assert np.allclose(g[0, 1], np.cos(y), atol=1e-12)
    assert np.allclose(g[0, 0], 0.0, atol=1e-12)
    assert np.allclose(g[1], 0.0, atol=1e-12)


def test_nyquist_mode_has_zero_odd_derivative():
    grid = SpectralGrid(16, 2 * math.pi)
    x, _ = grid.coords
    f = np.cos(8 * x)
    assert np.allclose(grid.gradient(f), 0.0, atol=1e-12)
    assert np.allclose(grid.laplacian(f), -64 * f, atol=1e-9)


def test_riesz_transforms_sum_to_identity_on_nonmean_modes(grid, rng):
    f = rng.standard_normal((grid.n, grid.n))
    total = grid.riesz2(f, 0, 0) + grid.riesz2(f, 1, 1)
    assert np.allclose(total, f - f.mean(), atol=1e-12)
    with pytest.raises(FieldError):
        grid.riesz2(f, 0, 2)


def test_K_identities_on_trig_field(grid):
    x, y = grid.coords
    u = np.stack([np.sin(x) * np.cos(2 * y), np.cos(3 * x) * np.sin(y)])
    du = grid.sym_grad(u)
    div = grid.divergence(u)
    rot = grid.rot2(u)
    assert np.allclose(grid.K_op(du), -2 * (div - div.mean()), atol=1e-11)
    assert np.allclose(grid.Kp_op(du), -(rot - rot.mean()), atol=1e-11)


def test_K_rejects_asymmetric_matrix(grid, rng):
    m = rng.standard_normal((2, 2, grid.n, grid.n))
    with pytest.raises(FieldError, match="symmetric"):
        grid.K_op(m)


def test_commutator_vanishes_for_constant_coefficient(grid):
    x, y = grid.coords
    u = np.stack([np.sin(x), np.cos(y)])
    du = grid.sym_grad(u)
    c = np.full((grid.n, grid.n), 2.5)
    assert np.allclose(grid.commutator_K(c, du, "K"), 0.0, atol=1e-11)
    assert np.allclose(grid.commutator_K(c, du, "Kp"), 0.0, atol=1e-11)


def test_non_finite_input_is_rejected(grid):
    f = np.zeros((grid.n, grid.n))
    f[3, 4] = np.nan
    with pytest.raises(FieldError, match="non-finite"):
        grid.gradient(f)


def test_shape_mismatch_is_rejected(grid):
    with pytest.raises(FieldError, match="shape"):
        grid.divergence(np.zeros((grid.n, grid.n)))


def test_product_dealias_removes_high_modes():
    grid = SpectralGrid(32, 2 * math.pi)
    x, _ = grid.coords
    a = np.cos(11 * x)
    plain = grid.product(a, a, dealias=False)
    assert np.allclose(plain, 0.5 + 0.5 * np.cos(22 * x), atol=1e-12)
    # mode 11 is above n/3 so it is filtered before multiplying
    assert np.allclose(grid.product(a, a), 0.0, atol=1e-12)


def test_quadrature_and_norms(grid):
    x, y = grid.coords
    assert grid.integrate(np.ones((grid.n, grid.n))) == pytest.approx(grid.L**2)
    assert grid.l2_norm(np.sin(x)) == pytest.approx(math.sqrt(grid.L**2 / 2))
    v = np.stack([np.sin(x), np.zeros_like(x)])
    assert grid.h1_norm(v) == pytest.approx(math.sqrt(grid.L**2))


def test_interpolant_matches_smooth_field_off_grid(grid, rng):
    f = _trig_field(grid)
    pts = rng.uniform(0, grid.L, size=(50, 2))
    exact = np.sin(2 * pts[:, 0]) * np.cos(3 * pts[:, 1])
    assert np.max(np.abs(grid.interpolate(f, pts) - exact)) < 2e-2


def test_interpolant_is_periodic_and_exact_at_nodes(grid):
    f = _trig_field(grid)
    interp = grid.interpolant(f)
    nodes = grid.points[:20]
    assert np.allclose(interp(nodes), f.reshape(-1)[:20], atol=1e-10)
    assert np.allclose(interp(nodes + grid.L), interp(nodes), atol=1e-12)


def test_interpolant_vector_shape(grid):
    v = np.stack([_trig_field(grid), 2 * _trig_field(grid)])
    out = grid.interpolant(v)(np.array([[0.3, 0.7], [1.0, 2.0], [4.0, 5.0]]))
    assert out.shape == (3, 2)
    assert np.allclose(out[:, 1], 2 * out[:, 0])


def _direct_sum_commutator(a, m, which, L):
    """O(n^4) circular convolution with kernels built from explicit DFT sums."""
    n = a.shape[0]
    modes = np.fft.fftfreq(n, d=1.0 / n)
    k = 2.0 * math.pi * modes / L
    k_odd = k.copy()
    k_odd[n // 2] = 0.0
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    o1, o2 = np.meshgrid(k_odd, k_odd, indexing="ij")
    mod2 = k1**2 + k2**2
    inv = np.where(mod2 > 0, 1.0 / np.where(mod2 > 0, mod2, 1.0), 0.0)
    p00, p11, p01 = k1**2, k2**2, o1 * o2
    if which == "K":
        symbols = {(0, 0): -2 * inv * p00, (1, 1): -2 * inv * p11, (0, 1): -2 * inv * p01, (1, 0): -2 * inv * p01}
    else:
        symbols = {(0, 0): 2 * inv * p01, (1, 1): -2 * inv * p01, (0, 1): 2 * inv * p11, (1, 0): -2 * inv * p00}

    idx = np.arange(n)
    dft = np.exp(2j * math.pi * np.outer(idx, modes) / n)
    diff = (idx[:, None] - idx[None, :]) % n
    out = np.zeros((n, n))
    for (j, l), sym in symbols.items():
        kernel = (dft @ sym @ dft.T).real / n**2
        full = kernel[diff[:, None, :, None], diff[None, :, None, :]]
        weighted = (a[None, None] - a[:, :, None, None]) * m[j, l][None, None]
        out += np.sum(full * weighted, axis=(2, 3))
    return out


@pytest.mark.parametrize("which", ["K", "Kp"])
def test_commutator_matches_direct_sum_on_single_modes(which):
    grid = SpectralGrid(16, 2.0 * math.pi)
    x, y = grid.coords
    a = 1.0 + 0.5 * np.cos(x + y)
    m = np.stack([np.stack([np.sin(2 * y), np.cos(x)]), np.stack([np.cos(x), np.sin(x - y)])])
    got = grid.commutator_K(a, m, which=which)
    expected = _direct_sum_commutator(a, m, which, grid.L)
    assert np.max(np.abs(expected)) > 1e-3
    assert np.allclose(got, expected, atol=1e-11)


@pytest.mark.parametrize("which", ["K", "Kp"])
def test_commutator_matches_direct_sum_on_random_fields(which, rng):
    grid = SpectralGrid(8, 3.0)
    a = rng.standard_normal((8, 8))
    m = rng.standard_normal((2, 2, 8, 8))
    m = 0.5 * (m + m.transpose(1, 0, 2, 3))
    got = grid.commutator_K(a, m, which=which, dealias=False)
    expected = _direct_sum_commutator(a, m, which, grid.L)
    assert np.allclose(got, expected, atol=1e-10)


def test_riesz_transform_converges_under_refinement():
    def smooth(grid):
        x, y = grid.coords
        return np.exp(np.sin(x)) * np.exp(0.5 * np.cos(y))

    reference_grid = SpectralGrid(128, 2.0 * math.pi)
    reference = reference_grid.riesz2(smooth(reference_grid), 0, 1)
    errors = []
    for n in (8, 16, 32):
        grid = SpectralGrid(n, 2.0 * math.pi)
        stride = 128 // n
        errors.append(float(np.max(np.abs(grid.riesz2(smooth(grid), 0, 1) - reference[::stride, ::stride]))))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-10


def test_interpolation_error_is_fourth_order():
    def exact(points):
        return np.exp(np.sin(points[:, 0]) + 0.5 * np.cos(points[:, 1]))

    pts = np.random.default_rng(7).uniform(0.0, 2.0 * math.pi, size=(200, 2))
    errors = []
    for n in (32, 64, 128):
        grid = SpectralGrid(n, 2.0 * math.pi)
        samples = exact(grid.points).reshape(n, n)
        errors.append(float(np.max(np.abs(grid.interpolate(samples, pts) - exact(pts)))))
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    assert min(orders) > 3.5
