import numpy as np
import pytest

from cavity_tdpes.bo import solve_bo
from cavity_tdpes.efactor import (
    conditional,
    energy_audit,
    eps_gd,
    eps_kin,
    eps_wpol_grid,
    eps_wpol_projected,
    extend_potential,
    gauge_residual,
    nuclear_density,
    nuclear_wavefunction,
    photon_resolved_densities,
    r_resolved_bo_populations,
    reconstruction_error,
    repropagate_nuclear,
    tdpes_pipeline,
    validity_mask,
)
from cavity_tdpes.grid import Grid1D, Grid3D
from cavity_tdpes.model import preset
from cavity_tdpes.polariton import solve_polaritonic_surfaces
from cavity_tdpes.propagator import InitialState, SplitOperator, WavefunctionSnapshot, build_initial_state, observables

R_EL = Grid1D(-30, 30, 64)
R_AX = Grid1D(-9, 9, 64)
Q_AX = Grid1D(-32, 32, 40)


def _gauss(x, a, x0=0.0):
    return (2 * a / np.pi) ** 0.25 * np.exp(-a * (x - x0) ** 2)


def _snap(psi, g, t=0.0):
    return WavefunctionSnapshot(g, t, psi.astype(complex))


@pytest.fixture(scope="module")
def surfaces():
    p = preset("pcet")
    bo = solve_bo(p, R_EL, R_AX, 6)
    pol = solve_polaritonic_surfaces(bo, p, 6, 6)
    return p, bo, pol


@pytest.fixture(scope="module")
def triplet(surfaces):
    p, bo, pol = surfaces
    g = Grid3D(R_EL, R_AX, Q_AX)
    init = build_initial_state(InitialState("polaritonic", 1), g, p, bo, pol)
    prop = SplitOperator(p, g, 0.1)
    snaps = [init]
    for _ in range(2):
        s = snaps[-1].copy()
        s.psi = prop.advance(s.psi, 5)
        s.time += 0.5
        snaps.append(s)
    return prop, snaps


def test_real_state_has_zero_phase():
    g = Grid3D(Grid1D(-10, 10, 32), Grid1D(-5, 5, 32), None)
    r, R, _ = g.mesh()
    psi = _gauss(r, 1.0, 0.3 * R) * _gauss(R, 1.0)
    nuc = nuclear_wavefunction(_snap(psi, g))
    assert np.max(np.abs(nuc.phase)) < 1e-14


@pytest.mark.parametrize("k", [0.3, -1.1, 2.0])
def test_boost_phase_is_linear(k):
    g = Grid3D(Grid1D(-10, 10, 32), Grid1D(-5, 5, 64), Grid1D(-8, 8, 16))
    r, R, q = g.mesh()
    psi = _gauss(r, 1.0, 0.3 * R) * _gauss(R, 1.0) * _gauss(q, 0.5) * np.exp(1j * k * R)
    snap = _snap(psi, g)
    nuc = nuclear_wavefunction(snap)
    m = nuc.mask
    expect = k * (g.R.points - g.R.points[nuc.ref_index])
    assert np.max(np.abs(nuc.phase[m] - expect[m])) < 1e-8
    # the trapezoid route agrees on smooth data
    trap = nuclear_wavefunction(snap, method="trapezoid")
    assert np.max(np.abs(trap.phase[m] - expect[m])) < 1e-8
    cond = conditional(snap, nuc)
    assert np.nanmax(np.abs(gauge_residual(cond))) < 1e-10


def test_shifted_gaussian_conditional_kinetic_energy():
    """Phi_R(r) = g(r - beta R) gives eps_kin = beta^2 a / 2M exactly."""
    a, beta, M = 0.8, 0.4, 1836.0
    g = Grid3D(Grid1D(-20, 20, 128), Grid1D(-5, 5, 64), None)
    r, R, _ = g.mesh()
    psi = _gauss(r, a, beta * R) * _gauss(R, 1.5)
    snap = _snap(psi, g)
    cond = conditional(snap, nuclear_wavefunction(snap))
    ek = eps_kin(cond, M)
    m = cond.mask & (np.abs(g.R.points) < 3.5)
    assert np.max(np.abs(ek[m] - beta**2 * a / (2 * M))) < 1e-10


def test_partial_normalization_and_reconstruction(triplet):
    _, snaps = triplet
    s = snaps[1]
    cond = conditional(s, nuclear_wavefunction(s))
    assert np.nanmax(np.abs(cond.norms() - 1)) < 1e-12
    assert reconstruction_error(s, cond) < 1e-12
    assert np.nanmax(np.abs(gauge_residual(cond))) < 1e-10


def test_stationary_state_has_constant_gd_term():
    g = Grid3D(Grid1D(-10, 10, 32), Grid1D(-5, 5, 32), None)
    r, R, _ = g.mesh()
    base = _gauss(r, 1.0, 0.2 * R) * _gauss(R, 1.0)
    E, d = -0.37, 0.5
    snaps = [_snap(base * np.exp(-1j * E * t), g, t) for t in (0.0, d, 2 * d)]
    nucs = [nuclear_wavefunction(s, mask=validity_mask(nuclear_density(snaps[0])), ref_index=5) for s in snaps]
    conds = [conditional(s, n, with_derivative=False) for s, n in zip(snaps, nucs)]
    gd = eps_gd(conds[0], conds[1], conds[2], d)
    m = conds[1].mask
    assert np.max(np.abs(gd[m] + np.sin(E * d) / d)) < 1e-12
    fwd = eps_gd(None, conds[0], conds[1], d, mode="forward")
    assert np.max(np.abs(fwd[m] + np.sin(E * d) / d)) < 1e-12


def test_initial_wpol_equals_second_polaritonic_surface(surfaces, triplet):
    p, bo, pol = surfaces
    prop, snaps = triplet
    s = snaps[0]
    cond = conditional(s, nuclear_wavefunction(s))
    proj, weight = eps_wpol_projected(cond, pol, bo)
    m = cond.mask
    assert np.max(np.abs(proj[m] - pol.energies[m, 1])) < 1e-10
    assert np.max(np.abs(weight[m] - 1)) < 1e-10
    grid = eps_wpol_grid(cond, p, prop.V)
    assert np.max(np.abs(grid[m] - pol.energies[m, 1])) < 1e-5


def test_pipeline_energy_bookkeeping(surfaces, triplet):
    p, bo, pol = surfaces
    prop, snaps = triplet
    rec = tdpes_pipeline(*snaps, p, pol, bo, potential=prop.V)
    assert rec.diagnostics["mode"] == "centered"
    assert rec.diagnostics["reconstruction_error"] < 1e-12
    assert rec.diagnostics["wpol_route_gap"] < 1e-4
    m = rec.mask
    assert np.allclose(rec.eps_total[m], (rec.eps_wpol + rec.eps_kin + rec.eps_gd)[m])
    assert np.all(np.isnan(rec.eps_total[~m]))
    audit = energy_audit(snaps[1], rec, observables(snaps[1], prop)["energy"], p.M)
    assert audit["ok"], audit
    first = tdpes_pipeline(None, snaps[0], snaps[1], p, pol, bo, potential=prop.V)
    assert first.diagnostics["mode"] == "forward"


def test_resolved_densities_sum_to_nuclear_density(surfaces, triplet):
    p, bo, _ = surfaces
    _, snaps = triplet
    s = snaps[2]
    rho = nuclear_density(s)
    pops = r_resolved_bo_populations(s, bo)
    assert np.max(np.abs(pops.sum(axis=0) - rho)) < 1e-3 * rho.max()
    dens = photon_resolved_densities(s, 5, p.omega_c)
    assert np.max(np.abs(dens.sum(axis=0) - rho)) < 1e-6 * rho.max()


def test_extend_potential_continues_edge_gradient():
    R = Grid1D(-5, 5, 41)
    x = R.points
    eps = 0.3 * x**2
    mask = np.abs(x) <= 2
    out, frac = extend_potential(np.where(mask, eps, np.nan), mask, R)
    assert np.allclose(out[mask], eps[mask])
    right = x > 2
    slope = np.diff(out[right]) / R.spacing
    assert np.allclose(slope, slope[0])
    assert frac == pytest.approx(1 - mask.mean())


def test_repropagation_keeps_stationary_density():
    R = Grid1D(-10, 10, 128)
    M, w = 100.0, 0.01
    x = R.points
    V = 0.5 * M * w * w * x**2
    a = M * w / 2
    chi0 = _gauss(x, a)
    mask = np.ones(R.n, dtype=bool)
    out, rep = repropagate_nuclear(np.array([0.0, 100.0]), np.array([V, V]), np.array([mask, mask]),
                                   chi0, R, M, 0.1, np.array([50.0, 100.0]))
    assert rep["max_bridged_fraction"] == 0
    assert np.max(np.abs(out - chi0**2)) < 1e-6
