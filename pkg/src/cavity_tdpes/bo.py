"""Born-Oppenheimer electronic states on the r-grid, one dense eigensolve per R."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid1D, GridError, trapezoid_integral, wavenumbers
from .model import ModelParams, matter_potential

log = logging.getLogger(__name__)

__all__ = ["BOSurfaceSet", "kinetic_matrix", "solve_bo", "bo_gap", "fix_signs", "write_bo_csv"]


def kinetic_matrix(grid: Grid1D, mass: float = 1.0) -> np.ndarray:
    """Dense Fourier-collocation matrix of ``-d^2/dx^2 / (2 mass)``.

    Identical to the kinetic operator the split-operator propagator applies
    along the same axis, so eigenstates are exact stationary states of the
    discretized dynamics.
    """
    k = wavenumbers(grid)
    n = grid.n
    # circulant: first column is the inverse transform of the symbol
    col = np.fft.ifft(0.5 * k * k / mass).real
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return col[idx]


def fix_signs(vectors: np.ndarray, weights: np.ndarray | None = None, min_overlap: float = 0.5):
    """Make column signs continuous along the leading axis.

    ``vectors`` has shape ``(n_R, dim, n_states)`` (real).  The first slice is
    fixed by making each column's largest-magnitude entry positive; later
    slices are flipped to give a positive overlap with the previous slice.
    Returns the fixed array and a list of ``(R_index, state, overlap)``
    entries whose overlap magnitude fell below ``min_overlap``.
    """
    v = np.array(vectors, copy=True)
    w = np.ones(v.shape[1]) if weights is None else weights
    first = v[0]
    peak = np.argmax(np.abs(first), axis=0)
    sgn = np.sign(first[peak, np.arange(first.shape[1])])
    sgn[sgn == 0] = 1.0
    v[0] *= sgn
    issues = []
    for k in range(1, v.shape[0]):
        ov = np.einsum("i,ij,ij->j", w, v[k - 1], v[k])
        flip = np.where(ov < 0, -1.0, 1.0)
        v[k] *= flip
        for s in np.flatnonzero(np.abs(ov) < min_overlap):
            issues.append((k, int(s), float(abs(ov[s]))))
    return v, issues


@dataclass
class BOSurfaceSet:
    """Lowest ``n_el`` electronic eigenpairs at every point of ``R_grid``.

    ``states[k, :, i]`` is state ``i`` at ``R_grid.points[k]`` sampled on
    ``r_grid``, normalized with trapezoid weights.
    """

    r_grid: Grid1D
    R_grid: Grid1D
    energies: np.ndarray  # (n_R, n_el)
    states: np.ndarray  # (n_R, n_r, n_el)
    dipole_moments: np.ndarray  # (n_R, n_el, n_el), <i|r|j>
    r2_moments: np.ndarray  # (n_R, n_el, n_el), <i|r^2|j>
    continuity_warnings: list = field(default_factory=list)

    @property
    def n_el(self) -> int:
        return self.energies.shape[1]


def solve_bo(
    params: ModelParams,
    r_grid: Grid1D,
    R_grid: Grid1D,
    n_el: int = 6,
    potential: Callable[[np.ndarray, float], np.ndarray] | None = None,
) -> BOSurfaceSet:
    """Diagonalize ``T_e + V(r; R)`` on ``r_grid`` for every ``R``.

    ``potential(r, R)`` replaces the Shin-Metiu potential when given (used by
    analytic self-tests).
    """
    if not 1 <= n_el <= 8:
        raise ValueError(f"n_el must be in [1, 8], got {n_el}")
    r = r_grid.points
    dx = r_grid.spacing
    T = kinetic_matrix(r_grid)
    n_R = R_grid.n
    energies = np.empty((n_R, n_el))
    states = np.empty((n_R, r_grid.n, n_el))
    for k, R in enumerate(R_grid.points):
        v = potential(r, R) if potential is not None else matter_potential(r, R, params)
        H = T + np.diag(v)
        try:
            e, vec = np.linalg.eigh(H)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
            raise RuntimeError(f"eigensolver failed at R={R}: {exc}") from exc
        energies[k] = e[:n_el]
        states[k] = vec[:, :n_el] / np.sqrt(dx)
    w = r_grid.weights
    norms = np.sqrt(np.einsum("i,kij->kj", w, states**2))
    states /= norms[:, None, :]
    states, issues = fix_signs(states, w)
    for k, s, ov in issues:
        log.warning("BO state %d: sign continuity ambiguous at R=%.4f (overlap %.3f)", s, R_grid.points[k], ov)
    wr = w * r
    dip = np.einsum("r,kri,krj->kij", wr, states, states)
    r2 = np.einsum("r,kri,krj->kij", wr * r, states, states)
    return BOSurfaceSet(r_grid, R_grid, energies, states, dip, r2, issues)


def bo_gap(bo: BOSurfaceSet, i: int, j: int, R: float) -> float:
    """``E_j(R) - E_i(R)`` by linear interpolation along the R grid."""
    pts = bo.R_grid.points
    if not pts[0] <= R <= pts[-1]:
        raise GridError(f"R={R} outside [{pts[0]}, {pts[-1]}]")
    return float(np.interp(R, pts, bo.energies[:, j] - bo.energies[:, i]))


def overlap_matrix(bo: BOSurfaceSet) -> np.ndarray:
    """``<i|j>`` at every R, shape ``(n_R, n_el, n_el)``."""
    return np.einsum("r,kri,krj->kij", bo.r_grid.weights, bo.states, bo.states)


def residuals(bo: BOSurfaceSet, params: ModelParams) -> np.ndarray:
    """L2 norm of ``(H - E) phi`` for every (R, state)."""
    T = kinetic_matrix(bo.r_grid)
    out = np.empty(bo.energies.shape)
    r = bo.r_grid.points
    for k, R in enumerate(bo.R_grid.points):
        H = T + np.diag(matter_potential(r, R, params))
        res = H @ bo.states[k] - bo.states[k] * bo.energies[k]
        out[k] = np.sqrt(trapezoid_integral(res.T**2, bo.r_grid))
    return out


def write_bo_csv(bo: BOSurfaceSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["R"] + [f"E{i}" for i in range(bo.n_el)])
        for R, row in zip(bo.R_grid.points, bo.energies):
            w.writerow([repr(float(R))] + [repr(float(x)) for x in row])
