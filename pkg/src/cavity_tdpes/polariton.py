"""Polaritonic surfaces in the truncated (BO state x photon Fock state) basis.

Basis index ``i * n_ph + n`` labels electronic state ``i`` with ``n`` photons.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bo import BOSurfaceSet, fix_signs
from .grid import Grid1D, GridError
from .model import ModelParams

log = logging.getLogger(__name__)

__all__ = [
    "PolaritonSurfaceSet",
    "photon_q_matrix",
    "photon_eigenfunctions",
    "build_h_pol",
    "solve_polaritonic_surfaces",
    "polaritonic_state_on_grid",
    "polaritonic_states",
    "basis_label",
]


def photon_q_matrix(n_ph: int, omega_c: float) -> np.ndarray:
    """Fock-space matrix of the displacement coordinate ``q``."""
    if n_ph < 2:
        raise ValueError("need at least two photon states")
    n = np.arange(1, n_ph)
    off = np.sqrt(n / (2.0 * omega_c))
    return np.diag(off, 1) + np.diag(off, -1)


def photon_eigenfunctions(q, omega_c: float, n_max: int, tail_tol: float | None = 1e-12) -> np.ndarray:
    """Harmonic-oscillator eigenfunctions ``xi_n(q)``, ``n = 0..n_max``.

    Uses the normalized Hermite recursion, stable for large ``n``.  With
    ``tail_tol`` set, raises :class:`GridError` when any function exceeds it
    in magnitude at either end of ``q``.
    """
    q = np.asarray(q, dtype=float)
    x = math.sqrt(omega_c) * q
    out = np.empty((n_max + 1, q.size))
    out[0] = (omega_c / math.pi) ** 0.25 * np.exp(-0.5 * x * x)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for n in range(2, n_max + 1):
        out[n] = math.sqrt(2.0 / n) * x * out[n - 1] - math.sqrt((n - 1) / n) * out[n - 2]
    if tail_tol is not None:
        edge = np.max(np.abs(out[:, [0, -1]]))
        if edge > tail_tol:
            raise GridError(
                f"q grid [{q[0]}, {q[-1]}] too small for {n_max} photons at omega={omega_c}: "
                f"boundary amplitude {edge:.2e}"
            )
    return out


def basis_label(index: int, n_ph: int) -> tuple[int, int]:
    return divmod(index, n_ph)


def build_h_pol(R: float, bo: BOSurfaceSet, params: ModelParams, n_el: int, n_ph: int) -> np.ndarray:
    """``H_BO + H_p + V_pm`` (plus self-polarization if enabled) at a grid point ``R``."""
    if n_el > bo.n_el:
        raise ValueError(f"n_el={n_el} exceeds the {bo.n_el} available BO states")
    k = bo.R_grid.index_of(R)
    return _h_pol_at(k, bo, params, n_el, n_ph)


def _h_pol_at(k: int, bo: BOSurfaceSet, params: ModelParams, n_el: int, n_ph: int) -> np.ndarray:
    R = bo.R_grid.points[k]
    w = params.omega_c
    eye_el = np.eye(n_el)
    eye_ph = np.eye(n_ph)
    d = R * eye_el - bo.dipole_moments[k, :n_el, :n_el]
    diag = bo.energies[k, :n_el][:, None] + w * (np.arange(n_ph)[None, :] + 0.5)
    H = np.diag(diag.ravel())
    H = H + w * params.lam * np.kron(d, photon_q_matrix(n_ph, w))
    if params.include_self_polarization:
        r1 = bo.dipole_moments[k, :n_el, :n_el]
        r2 = bo.r2_moments[k, :n_el, :n_el]
        d2 = R * R * eye_el - 2.0 * R * r1 + r2
        H = H + 0.5 * params.lam**2 * np.kron(d2, eye_ph)
    return 0.5 * (H + H.T)


@dataclass
class PolaritonSurfaceSet:
    R_grid: Grid1D
    n_el: int
    n_ph: int
    omega_c: float
    energies: np.ndarray  # (n_R, K)
    vectors: np.ndarray  # (n_R, K, K); column k is polaritonic state k
    character: np.ndarray  # (n_R, K, 2) dominant (i, n)
    weight: np.ndarray  # (n_R, K) squared coefficient of the dominant label
    edge_weight: np.ndarray  # (n_R, K) weight on the outermost basis states
    continuity_warnings: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.energies.shape[1]


def solve_polaritonic_surfaces(
    bo: BOSurfaceSet, params: ModelParams, n_el: int = 6, n_ph: int = 6, n_check: int = 4
) -> PolaritonSurfaceSet:
    """Per-R eigensolve of the polaritonic Hamiltonian with sign continuity.

    A warning is logged when any of the lowest ``n_check`` states carries more
    than 1e-4 of its weight on the outermost electronic or photonic basis
    states.
    """
    if n_el * n_ph > 64:
        raise ValueError("polaritonic basis limited to 64 states")
    K = n_el * n_ph
    n_R = bo.R_grid.n
    energies = np.empty((n_R, K))
    vectors = np.empty((n_R, K, K))
    for k in range(n_R):
        e, v = np.linalg.eigh(_h_pol_at(k, bo, params, n_el, n_ph))
        energies[k] = e
        vectors[k] = v
    vectors, issues = fix_signs(vectors)
    for k, s, ov in issues:
        if s < n_check:
            log.info("polaritonic state %d: low overlap %.3f at R=%.4f (avoided crossing)", s, ov, bo.R_grid.points[k])
    sq = vectors**2
    dom = np.argmax(sq, axis=1)  # (n_R, K)
    character = np.stack(np.divmod(dom, n_ph), axis=-1)
    weight = np.take_along_axis(sq, dom[:, None, :], axis=1)[:, 0, :]
    labels = np.arange(K)
    edge = (labels // n_ph == n_el - 1) | (labels % n_ph == n_ph - 1)
    edge_weight = sq[:, edge, :].sum(axis=1)
    worst = edge_weight[:, :n_check].max()
    if worst > 1e-4:
        log.warning("polaritonic basis truncation: edge weight %.2e in lowest %d states", worst, n_check)
    return PolaritonSurfaceSet(bo.R_grid, n_el, n_ph, params.omega_c, energies, vectors, character, weight, edge_weight, issues)


def polaritonic_states(pol: PolaritonSurfaceSet, k: int, bo: BOSurfaceSet, q_grid: Grid1D) -> np.ndarray:
    """Polaritonic eigenstate ``k`` at every R on the grid, shape ``(n_r, n_R, n_q)``."""
    if not 0 <= k < pol.size:
        raise ValueError(f"polaritonic level {k} out of range")
    xi = photon_eigenfunctions(q_grid.points, pol.omega_c, pol.n_ph - 1)
    c = pol.vectors[:, :, k].reshape(bo.R_grid.n, pol.n_el, pol.n_ph)  # (R, i, n)
    phi = bo.states[:, :, : pol.n_el]  # (R, r, i)
    out = np.einsum("Rri,Rin,nq->rRq", phi, c, xi, optimize=True)
    norm = np.einsum("rRq,r,q->R", out**2, bo.r_grid.weights, q_grid.weights, optimize=True)
    return out / np.sqrt(norm)[None, :, None]


def polaritonic_state_on_grid(
    pol: PolaritonSurfaceSet, k: int, R_index: int, bo: BOSurfaceSet, q_grid: Grid1D
) -> np.ndarray:
    """Polaritonic eigenstate ``k`` at one nuclear position, shape ``(n_r, n_q)``."""
    xi = photon_eigenfunctions(q_grid.points, pol.omega_c, pol.n_ph - 1)
    c = pol.vectors[R_index, :, k].reshape(pol.n_el, pol.n_ph)
    out = bo.states[R_index, :, : pol.n_el] @ c @ xi
    norm = np.einsum("rq,r,q->", out**2, bo.r_grid.weights, q_grid.weights)
    return out / np.sqrt(norm)
