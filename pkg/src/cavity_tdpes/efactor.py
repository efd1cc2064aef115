"""Exact-factorization inversion of a full wavefunction.

Given Psi(r, R, q, t) on a grid, build the nuclear factor chi(R, t) in the
gauge with vanishing vector potential, the conditional electron-photon factor
Phi_R(r, q, t) = Psi / chi, and the scalar time-dependent potential energy
surface ``eps = eps_wpol + eps_kin + eps_gd`` that drives chi.

Quantities are only meaningful where the nuclear density is appreciable.  The
validity mask keeps points with ``|chi|^2 >= threshold * max |chi|^2``; off
the mask every derived array holds NaN.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .bo import BOSurfaceSet
from .grid import Grid1D, Grid3D, GridError, mask_segments, masked_derivative, spectral_derivative, wavenumbers
from .model import ModelParams, total_potential_grid
from .polariton import PolaritonSurfaceSet, photon_eigenfunctions
from .propagator import WavefunctionSnapshot, bo_projections
from .storage import write_csv

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 1e-7

__all__ = [
    "NuclearWavefunction",
    "ConditionalSlice",
    "TDPESRecord",
    "validity_mask",
    "nuclear_density",
    "nuclear_phase",
    "nuclear_wavefunction",
    "conditional",
    "gauge_residual",
    "reconstruction_error",
    "eps_wpol",
    "eps_wpol_grid",
    "eps_wpol_projected",
    "eps_kin",
    "eps_gd",
    "tdpes_pipeline",
    "r_resolved_bo_populations",
    "photon_resolved_densities",
    "energy_audit",
    "extend_potential",
    "repropagate_nuclear",
]


@dataclass
class NuclearWavefunction:
    R_grid: Grid1D
    density: np.ndarray
    phase: np.ndarray
    mask: np.ndarray
    ref_index: int
    time: float

    @property
    def amplitude(self) -> np.ndarray:
        return np.sqrt(self.density) * np.exp(1j * self.phase)


@dataclass
class ConditionalSlice:
    """Phi_R(r, q) for every R of the grid (zero off the mask).

    ``dphi`` is the R-derivative of Phi in the same gauge, built from the
    spectral R-derivative of Psi.
    """

    grid: Grid3D
    time: float
    phi: np.ndarray
    mask: np.ndarray
    nuclear: NuclearWavefunction
    dphi: np.ndarray | None = None

    def norms(self) -> np.ndarray:
        n = np.einsum("rRq,r,q->R", np.abs(self.phi) ** 2, self.grid.r.weights, self.grid.q_weights)
        return np.where(self.mask, n, np.nan)


def _rq_inner(a: np.ndarray, b: np.ndarray, grid: Grid3D) -> np.ndarray:
    """``<a|b>_{r,q}`` for every R."""
    return np.einsum("rRq,rRq,r,q->R", a.conj(), b, grid.r.weights, grid.q_weights, optimize=True)


def validity_mask(density: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    density = np.asarray(density)
    return density >= threshold * density.max()


def nuclear_density(snapshot: WavefunctionSnapshot) -> np.ndarray:
    g = snapshot.grid
    return np.einsum("rRq,r,q->R", np.abs(snapshot.psi) ** 2, g.r.weights, g.q_weights, optimize=True)


def _neighbour_overlaps(psi: np.ndarray, grid: Grid3D) -> np.ndarray:
    """``<Psi(R_k)|Psi(R_{k+1})>_{r,q}`` for k = 0..n_R-2."""
    return np.einsum(
        "rRq,rRq,r,q->R", psi[:, :-1].conj(), psi[:, 1:], grid.r.weights, grid.q_weights, optimize=True
    )


def nuclear_phase(
    snapshot: WavefunctionSnapshot,
    density: np.ndarray | None = None,
    mask: np.ndarray | None = None,
    method: str = "overlap",
    ref_index: int | None = None,
) -> np.ndarray:
    """Phase S(R) of chi in the gauge where the vector potential vanishes.

    ``S' = Im<Psi|d_R Psi>_{r,q} / |chi|^2``.  With ``method="overlap"`` the
    increments are ``arg <Psi(R_k)|Psi(R_{k+1})>``, the discrete
    parallel-transport form of that integral, which makes the conditional
    factor's discrete connection vanish identically.  ``method="trapezoid"``
    integrates the spectral derivative expression with the trapezoid rule.
    S is zero at ``ref_index`` (default: first masked point).
    """
    g = snapshot.grid
    if density is None:
        density = nuclear_density(snapshot)
    if mask is None:
        mask = validity_mask(density)
    valid = np.flatnonzero(mask)
    if valid.size == 0:
        raise ValueError("empty validity mask")
    ref = int(valid[0]) if ref_index is None else int(ref_index)
    psi = snapshot.psi
    if method == "overlap":
        inc = np.angle(_neighbour_overlaps(psi, g))
    elif method == "trapezoid":
        dpsi = spectral_derivative(psi, g.R, 1, axis=1)
        grad = np.imag(_rq_inner(psi, dpsi, g)) / np.where(density > 0, density, 1.0)
        inc = 0.5 * g.R.spacing * (grad[1:] + grad[:-1])
    else:
        raise ValueError(f"unknown phase method {method!r}")
    S = np.zeros(g.R.n)
    S[1:] = np.cumsum(inc)
    return S - S[ref]


def nuclear_wavefunction(
    snapshot: WavefunctionSnapshot,
    threshold: float = DEFAULT_THRESHOLD,
    mask: np.ndarray | None = None,
    ref_index: int | None = None,
    method: str = "overlap",
) -> NuclearWavefunction:
    density = nuclear_density(snapshot)
    if mask is None:
        mask = validity_mask(density, threshold)
    valid = np.flatnonzero(mask)
    if valid.size == 0:
        raise ValueError("empty validity mask")
    ref = int(valid[0]) if ref_index is None else int(ref_index)
    S = nuclear_phase(snapshot, density, mask, method, ref)
    return NuclearWavefunction(snapshot.grid.R, density, S, mask, ref, snapshot.time)


def conditional(snapshot: WavefunctionSnapshot, nuc: NuclearWavefunction, with_derivative: bool = True) -> ConditionalSlice:
    """``Phi_R = Psi / chi`` on the mask (zero elsewhere)."""
    g = snapshot.grid
    mask = nuc.mask
    chi = nuc.amplitude
    inv = np.zeros(g.R.n, dtype=complex)
    inv[mask] = 1.0 / chi[mask]
    phi = snapshot.psi * inv[None, :, None]
    dphi = None
    if with_derivative:
        psi = snapshot.psi
        dpsi = spectral_derivative(psi, g.R, 1, axis=1)
        rho = np.where(mask, nuc.density, 1.0)
        # d_R chi / chi in the zero-vector-potential gauge
        log_deriv = np.where(mask, _rq_inner(psi, dpsi, g) / rho, 0.0)
        dphi = (dpsi - psi * log_deriv[None, :, None]) * inv[None, :, None]
    return ConditionalSlice(g, snapshot.time, phi, mask, nuc, dphi)


def gauge_residual(cond: ConditionalSlice) -> np.ndarray:
    """``<Phi_R| -i d_R Phi_R>`` by centered differences of the stored Phi.

    Evaluated at interior masked points whose two neighbours are masked;
    NaN elsewhere.
    """
    g = cond.grid
    phi = cond.phi
    h = g.R.spacing
    out = np.full(g.R.n, np.nan)
    fwd = _rq_inner(phi[:, 1:-1], phi[:, 2:], _slice_grid(g))
    bwd = _rq_inner(phi[:, 1:-1], phi[:, :-2], _slice_grid(g))
    A = np.imag(fwd - bwd) / (2.0 * h)
    m = cond.mask
    inner = m[1:-1] & m[2:] & m[:-2]
    out[1:-1][inner] = A[inner]
    return out


def _slice_grid(g: Grid3D) -> Grid3D:
    # _rq_inner only touches r and q weights, so the R axis length is irrelevant
    return g


def reconstruction_error(snapshot: WavefunctionSnapshot, cond: ConditionalSlice) -> float:
    """Max pointwise ``|chi Phi - Psi|`` over masked R, relative to max |Psi|."""
    chi = cond.nuclear.amplitude
    m = cond.mask
    rebuilt = chi[None, m, None] * cond.phi[:, m, :]
    err = np.max(np.abs(rebuilt - snapshot.psi[:, m, :]))
    return float(err / np.max(np.abs(snapshot.psi)))


# ---------------------------------------------------------------------------
# surface components
# ---------------------------------------------------------------------------
def eps_wpol_grid(cond: ConditionalSlice, params: ModelParams, potential: np.ndarray | None = None) -> np.ndarray:
    """``<Phi_R|H_pol (+ V_SP)|Phi_R>`` with spectral r and q kinetic operators."""
    g = cond.grid
    V = potential if potential is not None else total_potential_grid(params, g).values
    phi = cond.phi
    axes = (0, 2) if g.has_photon else (0,)
    spec = np.abs(sfft.fftn(phi, axes=axes)) ** 2
    kr = wavenumbers(g.r)[:, None, None]
    T = 0.5 * kr**2
    if g.has_photon:
        T = T + 0.5 * wavenumbers(g.q)[None, None, :] ** 2
        cell, npts = g.r.spacing * g.q.spacing, g.r.n * g.q.n
    else:
        cell, npts = g.r.spacing, g.r.n
    kin = np.sum(spec * T, axis=(0, 2)) * cell / npts
    pot = np.einsum("rRq,rRq,r,q->R", np.abs(phi) ** 2, V, g.r.weights, g.q_weights, optimize=True)
    out = kin + pot
    return np.where(cond.mask, out, np.nan)


def polaritonic_coefficients(cond: ConditionalSlice, pol: PolaritonSurfaceSet, bo: BOSurfaceSet) -> np.ndarray:
    """``C_k(R) = <Phi^k_R|Phi_R>``, shape ``(K, n_R)``."""
    g = cond.grid
    if not g.has_photon:
        raise GridError("polaritonic projection needs a photon axis")
    xi = photon_eigenfunctions(g.q.points, pol.omega_c, pol.n_ph - 1, tail_tol=None)
    a = np.einsum(
        "r,Rri,rRq,q,nq->Rin", g.r.weights, bo.states[:, :, : pol.n_el], cond.phi, g.q.weights, xi, optimize=True
    ).reshape(g.R.n, -1)
    return np.einsum("Rjk,Rj->kR", pol.vectors, a)


def eps_wpol_projected(cond: ConditionalSlice, pol: PolaritonSurfaceSet, bo: BOSurfaceSet) -> tuple[np.ndarray, np.ndarray]:
    """``sum_k |C_k|^2 eps_pol,k`` and the captured weight ``sum_k |C_k|^2``."""
    c2 = np.abs(polaritonic_coefficients(cond, pol, bo)) ** 2
    val = np.einsum("kR,Rk->R", c2, pol.energies)
    weight = c2.sum(axis=0)
    return np.where(cond.mask, val, np.nan), np.where(cond.mask, weight, np.nan)


def eps_wpol(
    cond: ConditionalSlice,
    params: ModelParams,
    pol: PolaritonSurfaceSet | None = None,
    bo: BOSurfaceSet | None = None,
    tol: float = 1e-4,
    potential: np.ndarray | None = None,
) -> np.ndarray:
    """Weighted-polaritonic component, cross-checked against the projection route.

    The grid-operator value is returned.  When surfaces are supplied and the
    density-weighted mean disagreement exceeds ``tol``, a truncation warning
    is issued.
    """
    grid_val = eps_wpol_grid(cond, params, potential)
    if pol is not None and bo is not None:
        proj, _ = eps_wpol_projected(cond, pol, bo)
        rho = np.where(cond.mask, cond.nuclear.density, 0.0)
        diff = np.nansum(rho * np.abs(grid_val - proj)) / rho.sum()
        if diff > tol:
            warnings.warn(f"eps_wpol routes disagree by {diff:.2e} au; polaritonic basis truncation", RuntimeWarning)
    return grid_val


def eps_kin(cond: ConditionalSlice, M: float) -> np.ndarray:
    """``<d_R Phi|d_R Phi>_{r,q} / 2M`` (zero vector potential)."""
    if cond.dphi is None:
        raise ValueError("conditional slice built without its R-derivative")
    g = cond.grid
    val = np.einsum("rRq,r,q->R", np.abs(cond.dphi) ** 2, g.r.weights, g.q_weights, optimize=True) / (2.0 * M)
    return np.where(cond.mask, val, np.nan)


def eps_gd(
    prev: ConditionalSlice | None,
    cur: ConditionalSlice,
    nxt: ConditionalSlice,
    delta: float,
    mode: str = "centered",
) -> np.ndarray:
    """``<Phi_R|-i d_t Phi_R>`` by a finite difference in time.

    ``mode="centered"`` uses ``(Phi(t+d) - Phi(t-d)) / 2d``;
    ``mode="forward"`` uses ``(Phi(t+d) - Phi(t)) / d`` and ignores ``prev``.
    """
    g = cur.grid
    if mode == "centered":
        if prev is None:
            raise ValueError("centered stencil needs the previous slice")
        val = np.imag(_rq_inner(cur.phi, nxt.phi - prev.phi, g)) / (2.0 * delta)
        mask = cur.mask & nxt.mask & prev.mask
    elif mode == "forward":
        val = np.imag(_rq_inner(cur.phi, nxt.phi, g)) / delta
        mask = cur.mask & nxt.mask
    else:
        raise ValueError(f"unknown stencil mode {mode!r}")
    return np.where(mask, val, np.nan)


# ---------------------------------------------------------------------------
# full record
# ---------------------------------------------------------------------------
@dataclass
class TDPESRecord:
    R_grid: Grid1D
    time: float
    density: np.ndarray
    phase: np.ndarray
    mask: np.ndarray
    eps_wpol: np.ndarray
    eps_kin: np.ndarray
    eps_gd: np.ndarray
    eps_total: np.ndarray
    force_wpol: np.ndarray
    force_gd: np.ndarray
    force_total: np.ndarray
    alignment_offset: float = 0.0
    eps_wpol_projected: np.ndarray | None = None
    captured_weight: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    CSV_COLUMNS = (
        "R", "density", "S", "eps_wpol", "eps_gd", "eps_kin", "eps_total",
        "force_wpol", "force_gd", "force_total", "mask",
    )

    def to_csv(self, path) -> None:
        cols = [
            self.R_grid.points, self.density, self.phase, self.eps_wpol, self.eps_gd, self.eps_kin,
            self.eps_total, self.force_wpol, self.force_gd, self.force_total, self.mask.astype(int),
        ]
        write_csv(path, list(self.CSV_COLUMNS), cols)

    @classmethod
    def from_csv(cls, path, time: float, R_grid: Grid1D) -> "TDPESRecord":
        from .storage import read_csv

        d = read_csv(path)
        return cls(
            R_grid, time, d["density"], d["S"], d["mask"].astype(bool), d["eps_wpol"], d["eps_kin"],
            d["eps_gd"], d["eps_total"], d["force_wpol"], d["force_gd"], d["force_total"],
        )


def _common_mask(snaps, threshold):
    masks = [validity_mask(nuclear_density(s), threshold) for s in snaps]
    out = masks[0]
    for m in masks[1:]:
        out = out & m
    return out


def tdpes_pipeline(
    prev: WavefunctionSnapshot | None,
    cur: WavefunctionSnapshot,
    nxt: WavefunctionSnapshot,
    params: ModelParams,
    pol: PolaritonSurfaceSet | None = None,
    bo: BOSurfaceSet | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    potential: np.ndarray | None = None,
    mode: str | None = None,
) -> TDPESRecord:
    """Invert a snapshot triplet ``(t - d, t, t + d)`` into the TDPES at ``t``.

    With ``prev=None`` the forward two-point stencil is used.  All three
    slices share the intersection mask and the phase reference point.
    """
    if mode is None:
        mode = "forward" if prev is None else "centered"
    snaps = [s for s in (prev, cur, nxt) if s is not None]
    if len({s.grid for s in snaps}) != 1:
        raise GridError("snapshots live on different grids")
    mask = _common_mask(snaps, threshold)
    if not mask.any():
        raise ValueError("snapshots share no valid R points")
    segs = mask_segments(mask)
    if len(segs) > 1:
        log.info("validity mask at t=%.2f au has %d segments", cur.time, len(segs))
    ref = segs[0][0]
    slices = {}
    for key, s in (("prev", prev), ("cur", cur), ("next", nxt)):
        if s is None:
            continue
        nuc = nuclear_wavefunction(s, mask=mask, ref_index=ref)
        slices[key] = conditional(s, nuc, with_derivative=(key == "cur"))
    c = slices["cur"]
    if mode == "centered":
        delta = 0.5 * (nxt.time - prev.time)
        if abs((cur.time - prev.time) - (nxt.time - cur.time)) > 1e-9 * max(1.0, delta):
            raise ValueError("centered stencil needs equally spaced snapshots")
    else:
        delta = nxt.time - cur.time
    if delta <= 0:
        raise ValueError("stencil spacing must be positive")

    V = potential if potential is not None else total_potential_grid(params, cur.grid).values
    e_wpol = eps_wpol_grid(c, params, V)
    e_kin = eps_kin(c, params.M)
    e_gd = eps_gd(slices.get("prev"), c, slices["next"], delta, mode)
    if mode == "centered":
        # forward-vs-centered spread estimates the time-stencil error
        fwd = eps_gd(None, c, slices["next"], nxt.time - cur.time, "forward")
        rho = np.where(mask, c.nuclear.density, 0.0)
        spread = np.nansum(rho * np.abs(np.gradient(np.nan_to_num(fwd - e_gd)))) / rho.sum()
    else:
        spread = float("nan")
    total = e_wpol + e_kin + e_gd
    R = cur.grid.R
    rec = TDPESRecord(
        R_grid=R,
        time=cur.time,
        density=c.nuclear.density,
        phase=c.nuclear.phase,
        mask=mask,
        eps_wpol=e_wpol,
        eps_kin=e_kin,
        eps_gd=e_gd,
        eps_total=total,
        force_wpol=-masked_derivative(e_wpol, R, mask),
        force_gd=-masked_derivative(e_gd, R, mask),
        force_total=-masked_derivative(total, R, mask),
    )
    imax = int(np.argmax(np.where(mask, c.nuclear.density, -1.0)))
    rec.alignment_offset = float(e_wpol[imax] - total[imax])
    route_gap = float("nan")
    if pol is not None and bo is not None and cur.grid.has_photon:
        rec.eps_wpol_projected, rec.captured_weight = eps_wpol_projected(c, pol, bo)
        rho = np.where(mask, c.nuclear.density, 0.0)
        route_gap = float(np.nansum(rho * np.abs(e_wpol - rec.eps_wpol_projected)) / rho.sum())
        if route_gap > 1e-4:
            log.warning("t=%.2f au: eps_wpol routes differ by %.2e au (basis truncation)", cur.time, route_gap)
    gres = gauge_residual(c)
    rec.diagnostics = {
        "segments": len(segs),
        "gauge_residual": float(np.nanmax(np.abs(gres))) if np.isfinite(gres).any() else 0.0,
        "partial_norm_error": float(np.nanmax(np.abs(c.norms() - 1.0))),
        "reconstruction_error": reconstruction_error(cur, c),
        "gd_stencil_spread": float(spread),
        "wpol_route_gap": route_gap,
        "mode": mode,
        "delta": float(delta),
    }
    return rec


# ---------------------------------------------------------------------------
# resolved populations
# ---------------------------------------------------------------------------
def r_resolved_bo_populations(snapshot: WavefunctionSnapshot, bo: BOSurfaceSet) -> np.ndarray:
    """``|C_i(R)|^2 = int dq |<Phi^BO_i(R)|Psi>_r|^2``, shape ``(n_el, n_R)``."""
    c = bo_projections(snapshot.psi, snapshot.grid, bo)
    return np.einsum("iRq,q->iR", np.abs(c) ** 2, snapshot.grid.q_weights)


def photon_resolved_densities(snapshot: WavefunctionSnapshot, n_max: int, omega_c: float) -> np.ndarray:
    """``rho_n(R) = int dr |int dq xi_n(q) Psi|^2`` for ``n = 0..n_max``."""
    g = snapshot.grid
    if not g.has_photon:
        if n_max > 0:
            raise GridError("photon-free grid holds only the zero-photon density")
        return nuclear_density(snapshot)[None, :]
    xi = photon_eigenfunctions(g.q.points, omega_c, n_max, tail_tol=1e-8)
    amp = np.einsum("rRq,q,nq->nrR", snapshot.psi, g.q.weights, xi, optimize=True)
    return np.einsum("nrR,r->nR", np.abs(amp) ** 2, g.r.weights)


# ---------------------------------------------------------------------------
# energy bookkeeping
# ---------------------------------------------------------------------------
def energy_audit(
    snapshot: WavefunctionSnapshot,
    record: TDPESRecord,
    total_energy: float,
    M: float,
    tol: float = 1e-4,
) -> dict:
    """Check how the TDPES components account for the total energy.

    ``total_energy`` is ``<H>`` from the propagator.  The report holds the
    integrated components and two residuals,
    ``<H> - (E_wpol + T_marg + E_kin)`` and ``<H_nuc> - <H> - E_GD``,
    each flagged when larger than ``tol``.
    """
    R = record.R_grid
    m = record.mask
    rho = np.where(m, record.density, 0.0)
    w = R.weights
    # -<chi|d^2|chi>/2M after integration by parts, with |d chi|^2 = |<Psi|d Psi>|^2 / rho.
    # Only the smooth Psi is differentiated, so density nodes cause no Gibbs ringing.
    g = snapshot.grid
    overlap = _rq_inner(snapshot.psi, spectral_derivative(snapshot.psi, g.R, 1, axis=1), g)
    dens = record.density
    grad2 = np.where(dens > 0, np.abs(overlap) ** 2 / np.where(dens > 0, dens, 1.0), 0.0)
    t_marg = float(np.sum(w * grad2) / (2.0 * M))
    chi = np.sqrt(dens) * np.exp(1j * record.phase)
    t_marg_spectral = float(np.real(np.sum(w * chi.conj() * spectral_derivative(chi, R, 2))) / (-2.0 * M))

    def integ(values):
        return float(np.sum(w * rho * np.nan_to_num(values)))

    e_wpol = integ(record.eps_wpol)
    e_kin = integ(record.eps_kin)
    e_gd = integ(record.eps_gd)
    h_nuc = integ(record.eps_total) + t_marg
    res1 = total_energy - (e_wpol + t_marg + e_kin)
    res2 = h_nuc - total_energy - e_gd
    return {
        "time_au": record.time,
        "H": total_energy,
        "E_wpol": e_wpol,
        "T_marg": t_marg,
        "T_marg_spectral": t_marg_spectral,
        "E_kin_cond": e_kin,
        "E_GD": e_gd,
        "H_nuc": h_nuc,
        "residual_total": res1,
        "residual_gd": res2,
        "ok": abs(res1) < tol and abs(res2) < tol,
    }


# ---------------------------------------------------------------------------
# nuclear re-propagation on the extracted surface
# ---------------------------------------------------------------------------
def extend_potential(eps: np.ndarray, mask: np.ndarray, R_grid: Grid1D) -> tuple[np.ndarray, float]:
    """Fill off-mask values so the gradient stays constant at each mask edge.

    Interior gaps are bridged linearly between the neighbouring segments;
    beyond the outermost segments the potential continues along the edge
    gradient.  Returns the filled array and the fraction of points filled.
    """
    segs = mask_segments(mask)
    if not segs:
        raise ValueError("empty mask")
    x = R_grid.points
    out = np.array(eps, dtype=float)
    grad = masked_derivative(eps, R_grid, mask)
    a0, _ = segs[0]
    _, b1 = segs[-1]
    out[:a0] = eps[a0] + grad[a0] * (x[:a0] - x[a0])
    out[b1:] = eps[b1 - 1] + grad[b1 - 1] * (x[b1:] - x[b1 - 1])
    for (_, b), (a, _) in zip(segs[:-1], segs[1:]):
        out[b:a] = np.interp(x[b:a], [x[b - 1], x[a]], [eps[b - 1], eps[a]])
    return out, float(1.0 - mask.mean())


def repropagate_nuclear(
    times: np.ndarray,
    eps_frames: np.ndarray,
    masks: np.ndarray,
    chi0: np.ndarray,
    R_grid: Grid1D,
    M: float,
    dt: float,
    out_times: np.ndarray,
) -> tuple[np.ndarray, dict]:
    """Propagate chi on the time-interpolated scalar surface.

    ``eps_frames[k]`` (with ``masks[k]``) is the surface at ``times[k]``.
    Each split-operator step samples the surface at its midpoint by linear
    interpolation between frames.  Returns ``|chi|^2`` at ``out_times`` and
    a report with the largest fraction of bridged (off-mask) points.
    """
    times = np.asarray(times, dtype=float)
    filled = []
    bridged = 0.0
    for e, m in zip(eps_frames, masks):
        f, frac = extend_potential(e, np.asarray(m, dtype=bool), R_grid)
        filled.append(f)
        bridged = max(bridged, frac)
    filled = np.array(filled)
    k = wavenumbers(R_grid)
    kin = np.exp(-1j * dt * 0.5 * k * k / M)
    chi = np.asarray(chi0, dtype=complex).copy()
    out = []
    t = times[0]
    targets = sorted(float(x) for x in out_times)
    for target in targets:
        n = int(round((target - t) / dt))
        for _ in range(max(n, 0)):
            v = _interp_frame(times, filled, t + 0.5 * dt)
            chi *= np.exp(-0.5j * dt * v)
            chi = sfft.ifft(sfft.fft(chi) * kin)
            chi *= np.exp(-0.5j * dt * v)
            t += dt
        out.append(np.abs(chi) ** 2)
    return np.array(out), {"max_bridged_fraction": bridged}


def _interp_frame(times, frames, t):
    j = int(np.searchsorted(times, t) - 1)
    j = min(max(j, 0), len(times) - 2)
    s = (t - times[j]) / (times[j + 1] - times[j])
    s = min(max(s, 0.0), 1.0)
    return (1.0 - s) * frames[j] + s * frames[j + 1]
