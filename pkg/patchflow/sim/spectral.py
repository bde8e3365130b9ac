"""Pseudo-spectral operators on the periodic square [0, L)^2.

Fields are plain float64 arrays. A scalar field has shape (n, n), a vector
field (2, n, n) and a matrix field (2, 2, n, n) with ``M[j, k]`` the (j, k)
entry; for ``grad_vector`` that entry is the derivative of component j along
axis k. Array axis 0 is x1 and axis 1 is x2, sampled at (i L/n, j L/n).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import numpy as np
from scipy import fft, ndimage

from .errors import FieldError

logger = logging.getLogger(__name__)

_FFT_AXES = (-2, -1)


def _require_finite(values: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(values)):
        raise FieldError(f"{name} contains non-finite samples")


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform periodic grid with its Fourier symbols."""

    n: int
    L: float

    def __post_init__(self) -> None:
        if self.n < 4 or self.n & (self.n - 1):
            raise FieldError(f"grid size must be a power of two, got n={self.n}")
        if not self.L > 0:
            raise FieldError(f"box length must be positive, got L={self.L}")

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @cached_property
    def coords(self) -> np.ndarray:
        """Return node coordinates with shape (2, n, n)."""
        x = np.arange(self.n) * self.h
        return np.stack(np.meshgrid(x, x, indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """Return node coordinates flattened to shape (n*n, 2)."""
        return self.coords.reshape(2, -1).T.copy()

    @cached_property
    def mode_numbers(self) -> np.ndarray:
        return fft.fftfreq(self.n, d=1.0 / self.n)

    @cached_property
    def _k1d(self) -> np.ndarray:
        return 2.0 * np.pi * fft.fftfreq(self.n, d=self.h)

    @cached_property
    def k(self) -> np.ndarray:
        """Full wavevector, shape (2, n, n); used by even-order symbols."""
        return np.stack(np.meshgrid(self._k1d, self._k1d, indexing="ij"))

    @cached_property
    def k_odd(self) -> np.ndarray:
        """Wavevector with the Nyquist entry zeroed; used by odd derivatives."""
        k1 = self._k1d.copy()
        k1[self.n // 2] = 0.0
        return np.stack(np.meshgrid(k1, k1, indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return self.k[0] ** 2 + self.k[1] ** 2

    @cached_property
    def inv_k2(self) -> np.ndarray:
        """1/|k|^2 with the mean mode set to zero."""
        safe = self.k2.copy()
        safe[0, 0] = 1.0
        out = 1.0 / safe
        out[0, 0] = 0.0
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        m = np.abs(self.mode_numbers)
        keep = m < self.n / 3.0
        return np.logical_and.outer(keep, keep)

    # -- transforms -----------------------------------------------------

    def to_fourier(self, f: np.ndarray) -> np.ndarray:
        return fft.fft2(f, axes=_FFT_AXES)

    def to_physical(self, f_hat: np.ndarray) -> np.ndarray:
        return fft.ifft2(f_hat, axes=_FFT_AXES).real

    def _check(self, f: np.ndarray, components: tuple[int, ...], name: str) -> np.ndarray:
        arr = np.asarray(f, dtype=float)
        expected = components + (self.n, self.n)
        if arr.shape != expected:
            raise FieldError(f"{name} has shape {arr.shape}, expected {expected}")
        _require_finite(arr, name)
        return arr

    # -- differential operators ----------------------------------------

    def gradient(self, f: np.ndarray) -> np.ndarray:
        f_hat = self.to_fourier(self._check(f, (), "scalar field"))
        return self.to_physical(1j * self.k_odd * f_hat)

    def divergence(self, v: np.ndarray) -> np.ndarray:
        v_hat = self.to_fourier(self._check(v, (2,), "vector field"))
        return self.to_physical(1j * (self.k_odd[0] * v_hat[0] + self.k_odd[1] * v_hat[1]))

    def rot2(self, v: np.ndarray) -> np.ndarray:
        """Return the scalar curl d1 v2 - d2 v1."""
        v_hat = self.to_fourier(self._check(v, (2,), "vector field"))
        return self.to_physical(1j * (self.k_odd[0] * v_hat[1] - self.k_odd[1] * v_hat[0]))

    def grad_vector(self, v: np.ndarray) -> np.ndarray:
        """Return G with G[j, k] = d_k v^j."""
        v_hat = self.to_fourier(self._check(v, (2,), "vector field"))
        g_hat = 1j * self.k_odd[None, :, :, :] * v_hat[:, None, :, :]
        return self.to_physical(g_hat)

    def sym_grad(self, v: np.ndarray) -> np.ndarray:
        g = self.grad_vector(v)
        return 0.5 * (g + g.transpose(1, 0, 2, 3))

    def div_matrix(self, m: np.ndarray) -> np.ndarray:
        """Return (div M)^j = d_k M^{jk}."""
        m_hat = self.to_fourier(self._check(m, (2, 2), "matrix field"))
        return self.to_physical(1j * (self.k_odd[0] * m_hat[:, 0] + self.k_odd[1] * m_hat[:, 1]))

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        _require_finite(f, "field")
        return self.to_physical(-self.k2 * self.to_fourier(f))

    def inv_laplacian(self, f: np.ndarray) -> np.ndarray:
        """Return the zero-mean g solving -Lap g = f - mean(f)."""
        f = self._check(f, (), "scalar field")
        return self.to_physical(self.inv_k2 * self.to_fourier(f))

    def _pair_symbol(self, j: int, k: int) -> np.ndarray:
        if j == k:
            return self.k[j] ** 2
        return self.k_odd[j] * self.k_odd[k]

    def riesz2(self, f: np.ndarray, j: int, k: int) -> np.ndarray:
        """Apply the multiplier k_j k_k / |k|^2 (zero at k = 0)."""
        if j not in (0, 1) or k not in (0, 1):
            raise FieldError(f"axes must be 0 or 1, got ({j}, {k})")
        f = self._check(f, (), "scalar field")
        return self.to_physical(self._pair_symbol(j, k) * self.inv_k2 * self.to_fourier(f))

    def _check_symmetric(self, m: np.ndarray) -> np.ndarray:
        m = self._check(m, (2, 2), "matrix field")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m[0, 1] - m[1, 0])) > 1e-10 * scale:
            raise FieldError("matrix field is not symmetric")
        return m

    def K_op(self, m: np.ndarray) -> np.ndarray:
        """Return 2 (-Lap)^-1 d_j d_k M^{jk}; K(Du) = -2 div u."""
        m_hat = self.to_fourier(self._check_symmetric(m))
        total = (
            self._pair_symbol(0, 0) * m_hat[0, 0]
            + self._pair_symbol(0, 1) * (m_hat[0, 1] + m_hat[1, 0])
            + self._pair_symbol(1, 1) * m_hat[1, 1]
        )
        return self.to_physical(-2.0 * self.inv_k2 * total)

    def Kp_op(self, m: np.ndarray) -> np.ndarray:
        """Return 2 (-Lap)^-1 (d_1 d_k M^{2k} - d_2 d_k M^{1k}); K'(Du) = -rot u."""
        m_hat = self.to_fourier(self._check_symmetric(m))
        total = (
            self._pair_symbol(0, 1) * (m_hat[0, 0] - m_hat[1, 1])
            + self._pair_symbol(1, 1) * m_hat[0, 1]
            - self._pair_symbol(0, 0) * m_hat[1, 0]
        )
        return self.to_physical(2.0 * self.inv_k2 * total)

    # -- products --------------------------------------------------------

    def dealias(self, f: np.ndarray) -> np.ndarray:
        return self.to_physical(self.dealias_mask * self.to_fourier(f))

    def product(self, a: np.ndarray, b: np.ndarray, dealias: bool = True) -> np.ndarray:
        """Pointwise product, truncated by the 2/3 rule when ``dealias``."""
        if not dealias:
            return a * b
        return self.dealias(self.dealias(a) * self.dealias(b))

    def commutator_K(
        self,
        a: np.ndarray,
        m: np.ndarray,
        which: Literal["K", "Kp"] = "K",
        dealias: bool = True,
    ) -> np.ndarray:
        """Return T(aM) - a T(M) for T = K or K'."""
        a = self._check(a, (), "coefficient")
        m = self._check_symmetric(m)
        op = self.K_op if which == "K" else self.Kp_op
        am = self.product(a[None, None], m, dealias)
        return op(am) - self.product(a, op(m), dealias)

    # -- quadrature ------------------------------------------------------

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(f) * self.cell_area)

    def l2_norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(np.sum(np.square(f)) * self.cell_area))

    def h1_norm(self, v: np.ndarray) -> float:
        """H^1 norm of a vector field (L2 plus gradient L2, squared then summed)."""
        return float(np.sqrt(self.l2_norm(v) ** 2 + self.l2_norm(self.grad_vector(v)) ** 2))

    def interpolant(self, f: np.ndarray) -> Interpolant:
        return Interpolant(self, f)

    def interpolate(self, f: np.ndarray, pts: np.ndarray) -> np.ndarray:
        return Interpolant(self, f)(pts)


class Interpolant:
    """Periodic cubic-spline evaluation of a grid field at arbitrary points.

    The spline coefficients are computed once so repeated evaluation (RK
    stages, probes) does not re-filter the field.
    """

    def __init__(self, grid: SpectralGrid, f: np.ndarray):
        f = np.asarray(f, dtype=float)
        if f.shape[-2:] != (grid.n, grid.n):
            raise FieldError(f"field shape {f.shape} does not match grid n={grid.n}")
        _require_finite(f, "interpolated field")
        self.grid = grid
        self.component_shape = f.shape[:-2]
        flat = f.reshape((-1, grid.n, grid.n))
        self._coeffs = [ndimage.spline_filter(c, order=3, mode="grid-wrap") for c in flat]

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        lead = pts.shape[:-1]
        idx = np.mod(pts.reshape(-1, 2) / self.grid.h, self.grid.n).T
        values = [
            ndimage.map_coordinates(c, idx, order=3, mode="grid-wrap", prefilter=False) for c in self._coeffs
        ]
        out = np.stack(values, axis=-1).reshape(lead + self.component_shape)
        return out
