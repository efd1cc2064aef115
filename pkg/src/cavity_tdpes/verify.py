"""Reduced-resolution self-check suite behind the ``verify`` command.

Every check returns a :class:`Check` with the measured value and the bound it
was held to, so the report is machine readable and failures name themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bo import solve_bo
from .config import RunConfig, default_config
from .grid import Grid1D, Grid3D, spectral_derivative, trapezoid_integral
from .model import ModelParams, PotentialField, preset, total_potential_grid
from .polariton import solve_polaritonic_surfaces
from .propagator import SplitOperator

__all__ = ["Check", "run_checks", "direct_polaritonic_levels"]


@dataclass
class Check:
    name: str
    value: float
    bound: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: {self.value:.3e} (bound {self.bound:.1e}) {self.note}".rstrip()


def _check(name, value, bound, note="", greater=False) -> Check:
    value = float(value)
    ok = value > bound if greater else value < bound
    return Check(name, value, bound, bool(ok and np.isfinite(value)), note)


# ---------------------------------------------------------------------------
# analytic unit checks
# ---------------------------------------------------------------------------
def check_spectral_derivative() -> Check:
    g = Grid1D(-12.0, 12.0, 128)
    x = g.points
    f = np.exp(-x**2)
    err = np.max(np.abs(spectral_derivative(f, g, 1) + 2 * x * f))
    return _check("spectral_derivative_gaussian", err, 1e-10)


def check_quadrature() -> Check:
    g = Grid1D(-12.0, 12.0, 97)
    val = trapezoid_integral(np.exp(-g.points**2), g)
    return _check("trapezoid_gaussian_integral", abs(val - math.sqrt(math.pi)), 1e-12)


def check_eigensolver() -> Check:
    """Harmonic electron potential: levels (n + 1/2) w for every R."""
    w = 0.3
    r = Grid1D(-20.0, 20.0, 128)
    R = Grid1D(-1.0, 1.0, 8)
    bo = solve_bo(preset("pcet"), r, R, 4, potential=lambda x, _R: 0.5 * w * w * (x - _R) ** 2)
    err = np.max(np.abs(bo.energies - w * (np.arange(4) + 0.5)))
    return _check("eigensolver_harmonic_levels", err, 1e-9)


def check_free_packet() -> Check:
    """Free Gaussian spreading in R with zero potential."""
    params = preset("pcet")
    g = Grid3D(Grid1D(-5.0, 5.0, 16), Grid1D(-30.0, 30.0, 256), None)
    r, R, _ = g.mesh()
    a = 2.85
    psi = (np.exp(-(r**2)) * np.exp(-a * R**2)).astype(complex)
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2 * g.volume_weights()))
    V = np.zeros(g.shape)
    # electron kinetic energy would spread r too; compare only the R marginal width
    prop = SplitOperator(params, g, 2.0, potential=PotentialField(g, V))
    t = 2000.0
    out = prop.advance(psi, int(t / 2.0))
    rho_R = np.einsum("rRq,r->R", np.abs(out) ** 2, g.r.weights)
    var = np.sum(g.R.weights * rho_R * g.R.points**2) / np.sum(g.R.weights * rho_R)
    expect = (1.0 / (4 * a)) * (1.0 + (2.0 * a * t / params.M) ** 2)
    return _check("free_packet_spreading", abs(var - expect) / expect, 1e-8)


# ---------------------------------------------------------------------------
# model checks
# ---------------------------------------------------------------------------
def check_decoupled_limit(cfg: RunConfig) -> Check:
    g = cfg.grid3()
    params = cfg.params().with_(lam=0.0)
    bo = solve_bo(params, g.r, g.R, cfg.analysis.n_el)
    pol = solve_polaritonic_surfaces(bo, params, cfg.analysis.n_el, cfg.analysis.n_ph)
    ref = (bo.energies[:, :, None] + params.omega_c * (np.arange(cfg.analysis.n_ph) + 0.5)).reshape(g.R.n, -1)
    err = np.max(np.abs(np.sort(ref, axis=1) - pol.energies))
    return _check("lambda0_polaritonic_equals_bo_plus_photon", err, 1e-10)


def resonance_checks(r_grid: Grid1D | None = None) -> list[Check]:
    r_grid = r_grid or Grid1D(-30.0, 30.0, 128)
    out = []
    R = Grid1D(-2.2, 2.2, 23)  # contains -2.2, 0 and 2.2
    elex = solve_bo(preset("elex"), r_grid, R, 3)
    for x in (-2.2, 2.2):
        gap = elex.energies[R.index_of(x), 1] - elex.energies[R.index_of(x), 0]
        out.append(_check(f"elex_gap_E1_E0_R{x:+.1f}", abs(gap - 0.049) / 0.049, 0.05, f"gap={gap:.5f}"))
    gap = elex.energies[R.index_of(0.0), 2] - elex.energies[R.index_of(0.0), 0]
    out.append(_check("elex_gap_E2_E0_R0", abs(gap - 0.049) / 0.049, 0.05, f"gap={gap:.5f}"))
    Rp = Grid1D(-4.0, -3.0, 8)
    pcet = solve_bo(preset("pcet"), r_grid, Rp, 2)
    gap = pcet.energies[0, 1] - pcet.energies[0, 0]
    out.append(_check("pcet_gap_E1_E0_R-4", abs(gap - 0.1) / 0.1, 0.05, f"gap={gap:.5f}"))
    return out


def direct_polaritonic_levels(params: ModelParams, R_value: float, r_grid: Grid1D, q_grid: Grid1D, n: int) -> np.ndarray:
    """Lowest ``n`` eigenvalues of the electron-photon Hamiltonian at fixed R.

    Dense diagonalization on the (r, q) product grid, using the same grid
    potential as the propagator.  Independent of the BO x Fock basis.
    """
    from .bo import kinetic_matrix

    R = Grid1D(R_value - 1.0, R_value + 1.0, 9)
    g = Grid3D(r_grid, R, q_grid)
    V = total_potential_grid(params, g).values[:, R.index_of(R_value), :]
    Tr = kinetic_matrix(r_grid)
    Tq = kinetic_matrix(q_grid)
    H = np.kron(Tr, np.eye(q_grid.n)) + np.kron(np.eye(r_grid.n), Tq) + np.diag(V.ravel())
    return np.linalg.eigvalsh(H)[:n]


def check_rabi_dual_route(lam: float = 0.02) -> Check:
    """Polaritonic levels at the ELEX resonance: basis route vs direct grid route.

    A larger coupling makes the Rabi splitting large compared with the
    basis-truncation error, so any error in the light-matter dipole term of
    either route shows up.  The self-polarization term keeps the Hamiltonian
    bounded from below on the finite box at this coupling.
    """
    params = preset("elex").with_(lam=lam, include_self_polarization=True)
    r = Grid1D(-25.0, 25.0, 72)
    q = Grid1D(-28.0, 28.0, 28)
    R = Grid1D(1.2, 3.2, 11)  # contains 2.2
    bo = solve_bo(params, r, R, 8)
    pol = solve_polaritonic_surfaces(bo, params, 8, 8)
    basis = pol.energies[R.index_of(2.2), :4]
    direct = direct_polaritonic_levels(params, 2.2, r, q, 4)
    split = basis[2] - basis[1]
    return _check("rabi_splitting_dual_route", np.max(np.abs(basis - direct)), 1e-6, f"splitting={split:.5f}")


def check_dipole_quadrature() -> Check:
    """Basis dipole matrix vs direct quadrature of the grid coupling term."""
    params = preset("pcet")
    g = Grid3D(Grid1D(-30.0, 30.0, 64), Grid1D(-4.0, 4.0, 9), Grid1D(-32.0, 32.0, 20))
    bo = solve_bo(params, g.r, g.R, 3)
    V = total_potential_grid(params, g, keep_components=True).components["coupling"]
    q = g.q.points
    worst = 0.0
    for k in range(g.R.n):
        # <i|coupling|j>_r, divided by omega*lam*q, is the dipole matrix element
        c = np.einsum("r,ri,rq,rj->qij", g.r.weights, bo.states[k], V[:, k, :], bo.states[k])
        sel = np.abs(q) > 1.0
        d_grid = c[sel] / (params.omega_c * params.lam * q[sel, None, None])
        d_basis = g.R.points[k] * np.eye(3) - bo.dipole_moments[k, :3, :3]
        worst = max(worst, float(np.max(np.abs(d_grid - d_basis[None]))))
    return _check("dipole_matrix_vs_grid_quadrature", worst, 1e-9)


# ---------------------------------------------------------------------------
# dynamics checks
# ---------------------------------------------------------------------------
def coarse_config(t_final_fs: float = 26.0) -> RunConfig:
    cfg = default_config("pcet")
    return cfg.with_overrides([
        "grid.resolution=coarse",
        f"propagation.t_final_fs={t_final_fs}",
        "propagation.extra_times_fs=3.39,17.42,21.29,25.56",
        "propagation.boundary_tol=1e-6",
    ])


def dynamics_checks(cfg: RunConfig | None = None, qcl_traj: int = 2000) -> list[Check]:
    from .pipeline import repropagation_check, run_qcl, run_scenario

    cfg = cfg or coarse_config()
    res = run_scenario(cfg, "verify")
    out = []
    norm = res.series.column("norm")
    energy = res.series.column("energy")
    out.append(_check("norm_conservation", np.max(np.abs(norm - 1.0)), 1e-8))
    out.append(_check("energy_conservation", np.max(np.abs(energy - energy[0])), 1e-6))
    out.append(_check("gauge_residual", max(r.diagnostics["gauge_residual"] for r in res.records), 1e-6))
    out.append(_check("partial_normalization", max(r.diagnostics["partial_norm_error"] for r in res.records), 1e-6))
    out.append(_check("reconstruction", max(r.diagnostics["reconstruction_error"] for r in res.records), 1e-10))
    out.append(_check("energy_identity_total", max(abs(a["residual_total"]) for a in res.audits), 1e-4))
    out.append(_check("energy_identity_gd", max(abs(a["residual_gd"]) for a in res.audits), 1e-4))
    rep = repropagation_check(res, min(25.0, cfg.propagation.t_final_fs - 1.0))
    out.append(_check("ef_repropagation_l1", rep["max_l1"], 0.05))
    full = run_qcl(res.records, cfg, "full", n_traj=qcl_traj)
    wpol = run_qcl(res.records, cfg, "wpol", n_traj=qcl_traj)
    margin = np.min(wpol.l1 - full.l1)
    out.append(_check("qcl_full_beats_wpol", margin, 0.0, greater=True))
    return out


def run_checks(coarse: bool = True, with_dynamics: bool = True) -> list[Check]:
    cfg = coarse_config() if coarse else default_config("pcet")
    checks = [
        check_spectral_derivative(),
        check_quadrature(),
        check_eigensolver(),
        check_free_packet(),
        check_decoupled_limit(cfg),
        *resonance_checks(),
        check_dipole_quadrature(),
        check_rabi_dual_route(),
    ]
    if with_dynamics:
        checks += dynamics_checks(cfg)
    return checks
