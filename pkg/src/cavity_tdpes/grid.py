"""Uniform coordinate meshes, quadrature and derivative operators.

Every 3D field in the package is stored as a C-ordered array of shape
``(n_r, n_R, n_q)``: the electron coordinate ``r`` is the slowest axis and the
photon displacement ``q`` the fastest.  A cavity-free calculation uses a
:class:`Grid3D` without a photon axis; the array then keeps a trailing axis of
length one with unit quadrature weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

__all__ = [
    "GridError",
    "Grid1D",
    "Grid3D",
    "trapezoid_weights",
    "trapezoid_integral",
    "cumulative_integral",
    "spectral_derivative",
    "spectral_partial_integral",
    "wavenumbers",
    "finite_difference",
    "masked_derivative",
    "mask_segments",
]

AXIS_ORDER = ("r", "R", "q")


class GridError(ValueError):
    """Raised when array shapes or indices violate a grid contract."""


@dataclass(frozen=True)
class Grid1D:
    """Endpoint-inclusive uniform mesh ``min + k * spacing``, ``k = 0..n-1``."""

    min: float
    max: float
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8:
            raise GridError(f"grid needs at least 8 points, got n={self.n}")
        if not self.max > self.min:
            raise GridError(f"grid max ({self.max}) must exceed min ({self.min})")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "min", float(self.min))
        object.__setattr__(self, "max", float(self.max))

    @property
    def spacing(self) -> float:
        return (self.max - self.min) / (self.n - 1)

    @cached_property
    def points(self) -> np.ndarray:
        pts = self.min + np.arange(self.n) * self.spacing
        pts.setflags(write=False)
        return pts

    @cached_property
    def weights(self) -> np.ndarray:
        w = trapezoid_weights(self)
        w.setflags(write=False)
        return w

    def index_of(self, x: float, tol: float = 1e-9) -> int:
        """Index of the mesh point equal to ``x`` (within ``tol * spacing``)."""
        k = int(round((x - self.min) / self.spacing))
        if k < 0 or k >= self.n or abs(self.points[k] - x) > tol * self.spacing:
            raise GridError(f"{x} is not a point of {self}")
        return k

    def refined(self, factor: float) -> "Grid1D":
        """Same interval with ``n`` scaled by ``factor`` (rounded to even)."""
        n = int(round(self.n * factor / 2.0)) * 2
        return Grid1D(self.min, self.max, n)


@dataclass(frozen=True)
class Grid3D:
    """Product mesh for ``(r, R, q)``; ``q=None`` means no photon mode."""

    r: Grid1D
    R: Grid1D
    q: Grid1D | None = None

    @property
    def has_photon(self) -> bool:
        return self.q is not None

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.r.n, self.R.n, self.q.n if self.q is not None else 1)

    @property
    def size(self) -> int:
        n_r, n_R, n_q = self.shape
        return n_r * n_R * n_q

    @property
    def q_points(self) -> np.ndarray:
        return self.q.points if self.q is not None else np.zeros(1)

    @property
    def q_weights(self) -> np.ndarray:
        return self.q.weights if self.q is not None else np.ones(1)

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays of shapes (n_r,1,1), (1,n_R,1), (1,1,n_q)."""
        return (
            self.r.points[:, None, None],
            self.R.points[None, :, None],
            self.q_points[None, None, :],
        )

    def volume_weights(self) -> np.ndarray:
        """Full 3D trapezoid weight array."""
        return (
            self.r.weights[:, None, None]
            * self.R.weights[None, :, None]
            * self.q_weights[None, None, :]
        )


def trapezoid_weights(grid: Grid1D) -> np.ndarray:
    w = np.full(grid.n, grid.spacing)
    w[0] = w[-1] = 0.5 * grid.spacing
    return w


def _check_axis(values: np.ndarray, grid: Grid1D, axis: int) -> None:
    if values.shape[axis] != grid.n:
        raise GridError(
            f"values have {values.shape[axis]} samples along axis {axis}, grid has {grid.n}"
        )


def trapezoid_integral(values, grid: Grid1D, axis: int = -1):
    """Composite trapezoid rule along ``axis``."""
    values = np.asarray(values)
    _check_axis(values, grid, axis)
    return np.tensordot(np.moveaxis(values, axis, -1), grid.weights, axes=([-1], [0]))


def cumulative_integral(values, grid: Grid1D, start_index: int = 0) -> np.ndarray:
    """Running trapezoid integral that vanishes at ``start_index``.

    Below ``start_index`` the result is the negative of the integral taken
    from the sample up to ``start_index``.
    """
    values = np.asarray(values)
    if values.ndim != 1:
        raise GridError("cumulative_integral expects a 1D array")
    _check_axis(values, grid, 0)
    if not 0 <= start_index < grid.n:
        raise GridError(f"start_index {start_index} outside [0, {grid.n})")
    panels = 0.5 * grid.spacing * (values[1:] + values[:-1])
    out = np.zeros(grid.n, dtype=np.result_type(values, float))
    out[1:] = np.cumsum(panels)
    return out - out[start_index]


def wavenumbers(grid: Grid1D) -> np.ndarray:
    """Angular FFT wavenumbers of the (periodically wrapped) mesh."""
    return 2.0 * np.pi * np.fft.fftfreq(grid.n, grid.spacing)


def spectral_partial_integral(values, grid: Grid1D, upper: float) -> float:
    """Exact integral of the Fourier interpolant of ``values`` from ``grid.min`` to ``upper``.

    A plain quadrature sum over the points below ``upper`` carries an error of
    order ``spacing * f(upper)`` that depends on where the nodes fall; the
    interpolant integral does not.  Same periodicity assumption as
    :func:`spectral_derivative`.
    """
    values = np.asarray(values, dtype=float)
    _check_axis(values, grid, 0)
    s = float(np.clip(upper, grid.min, grid.min + grid.n * grid.spacing)) - grid.min
    c = np.fft.fft(values) / grid.n
    k = wavenumbers(grid)
    terms = np.zeros(grid.n, dtype=complex)
    nz = k != 0.0
    terms[nz] = c[nz] * np.expm1(1j * k[nz] * s) / (1j * k[nz])
    if grid.n % 2 == 0:
        kn = abs(k[grid.n // 2])
        terms[grid.n // 2] = c[grid.n // 2] * np.sin(kn * s) / kn  # split cosine Nyquist mode
    return float((c[0] * s + terms[1:].sum()).real)


def spectral_derivative(values, grid: Grid1D, order: int = 1, axis: int = -1, workers: int = 1):
    """Fourier-collocation derivative of order 1 or 2 along ``axis``.

    The field is treated as periodic with period ``n * spacing``; callers are
    responsible for fields decaying to zero at both ends.
    """
    if order not in (1, 2):
        raise GridError(f"order must be 1 or 2, got {order}")
    values = np.asarray(values)
    _check_axis(values, grid, axis)
    k = wavenumbers(grid)
    if order == 1:
        factor = 1j * k
        if grid.n % 2 == 0:
            factor[grid.n // 2] = 0.0  # Nyquist mode has no odd partner
    else:
        factor = -(k**2)
    shape = [1] * values.ndim
    shape[axis] = grid.n
    spec = sfft.fft(values, axis=axis, workers=workers) * factor.reshape(shape)
    out = sfft.ifft(spec, axis=axis, workers=workers, overwrite_x=True)
    if np.isrealobj(values):
        return out.real
    return out


# 4th-order stencils: centered, and one-sided for the two points at each end.
_C4 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_ONE_SIDED = {
    0: np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0,
    1: np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0,
}


def finite_difference(values, spacing: float) -> np.ndarray:
    """Non-periodic first derivative of a 1D sample array.

    Fourth order in the interior and at the ends (one-sided stencils) when at
    least five samples are available; shorter arrays fall back to
    :func:`numpy.gradient`, and a single sample has derivative zero.
    """
    f = np.asarray(values)
    n = f.shape[0]
    if n == 1:
        return np.zeros_like(f)
    if n < 5:
        return np.gradient(f, spacing, axis=0)
    out = np.empty_like(f)
    out[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / 12.0
    head = f[:5]
    tail = f[-5:][::-1]
    out[0] = np.tensordot(_ONE_SIDED[0], head, axes=(0, 0))
    out[1] = np.tensordot(_ONE_SIDED[1], head, axes=(0, 0))
    out[-1] = -np.tensordot(_ONE_SIDED[0], tail, axes=(0, 0))
    out[-2] = -np.tensordot(_ONE_SIDED[1], tail, axes=(0, 0))
    return out / spacing


def mask_segments(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open ``(start, stop)`` index ranges of the True runs in ``mask``."""
    m = np.asarray(mask, dtype=bool).astype(np.int8)
    edges = np.diff(np.concatenate(([0], m, [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return list(zip(starts.tolist(), stops.tolist()))


def masked_derivative(values, grid: Grid1D, mask) -> np.ndarray:
    """Piecewise :func:`finite_difference` on each valid segment; NaN elsewhere."""
    values = np.asarray(values, dtype=float)
    _check_axis(values, grid, 0)
    out = np.full(grid.n, np.nan)
    for a, b in mask_segments(mask):
        out[a:b] = finite_difference(values[a:b], grid.spacing)
    return out
