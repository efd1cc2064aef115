import numpy as np
import pytest

from cavity_tdpes.bo import solve_bo
from cavity_tdpes.grid import Grid1D, GridError
from cavity_tdpes.model import preset
from cavity_tdpes.polariton import (
    build_h_pol,
    photon_eigenfunctions,
    photon_q_matrix,
    polaritonic_state_on_grid,
    polaritonic_states,
    solve_polaritonic_surfaces,
)
from cavity_tdpes.verify import check_dipole_quadrature, check_rabi_dual_route

R_GRID = Grid1D(-9, 9, 37)
R_GRID_EVEN = Grid1D(-9, 9, 64)


@pytest.fixture(scope="module")
def pcet():
    p = preset("pcet")
    bo = solve_bo(p, Grid1D(-30, 30, 128), R_GRID, 8)
    return p, bo


def test_photon_functions_orthonormal_and_q_matrix():
    w = 0.1
    q = Grid1D(-40, 40, 401)
    xi = photon_eigenfunctions(q.points, w, 5)
    S = np.einsum("q,nq,mq->nm", q.weights, xi, xi)
    assert np.max(np.abs(S - np.eye(6))) < 1e-12
    Q = np.einsum("q,nq,mq->nm", q.weights, xi, q.points * xi)
    assert np.max(np.abs(Q - photon_q_matrix(6, w))) < 1e-12


def test_photon_tail_check():
    with pytest.raises(GridError):
        photon_eigenfunctions(np.linspace(-5, 5, 40), 0.049, 3)


def test_decoupled_limit_is_bo_plus_photon_ladder(pcet):
    p, bo = pcet
    p0 = p.with_(lam=0.0)
    pol = solve_polaritonic_surfaces(bo, p0, 6, 6)
    ref = (bo.energies[:, :6, None] + p.omega_c * (np.arange(6) + 0.5)).reshape(R_GRID.n, -1)
    assert np.max(np.abs(np.sort(ref, axis=1) - pol.energies)) < 1e-10


def test_hamiltonian_symmetric_and_coupling_structure(pcet):
    p, bo = pcet
    H = build_h_pol(-4.0, bo, p, 3, 3)
    assert np.allclose(H, H.T)
    k = R_GRID.index_of(-4.0)
    # <BO0, n=0| H |BO1, n=1> = w lam (-r_01) sqrt(1/(2w))
    expect = -p.omega_c * p.lam * bo.dipole_moments[k, 0, 1] * np.sqrt(1 / (2 * p.omega_c))
    assert H[0, 4] == pytest.approx(expect, rel=1e-12)


def test_basis_truncation_is_stable(pcet):
    p, bo = pcet
    a = solve_polaritonic_surfaces(bo, p, 6, 6).energies[:, :4]
    b = solve_polaritonic_surfaces(bo, p, 8, 8).energies[:, :4]
    assert np.max(np.abs(a - b)) < 1e-5


def test_basis_route_matches_direct_grid_diagonalization():
    """Independent route: dense (r, q) diagonalization at fixed R."""
    check = check_rabi_dual_route()
    assert check.passed, check.line()


def test_rabi_check_detects_wrong_dipole_magnitude(monkeypatch):
    import cavity_tdpes.model as model

    monkeypatch.setattr(model, "dipole", lambda r, R: 1.1 * (R - r))
    assert not check_rabi_dual_route().passed


def test_dipole_quadrature_detects_wrong_dipole_sign(monkeypatch):
    # a sign flip of r is a constant dipole shift that the spectrum cannot see
    import cavity_tdpes.model as model

    assert check_dipole_quadrature().passed
    monkeypatch.setattr(model, "dipole", lambda r, R: R + r)
    assert not check_dipole_quadrature().passed


def test_polaritonic_states_normalized_and_consistent(pcet):
    p, bo = pcet
    pol = solve_polaritonic_surfaces(bo, p, 6, 6)
    q = Grid1D(-32, 32, 40)
    full = polaritonic_states(pol, 1, bo, q)
    norms = np.einsum("rRq,r,q->R", full**2, bo.r_grid.weights, q.weights)
    assert np.allclose(norms, 1.0)
    one = polaritonic_state_on_grid(pol, 1, 5, bo, q)
    assert np.allclose(one, full[:, 5, :])


def test_pcet_second_polaritonic_state_is_mixed_near_resonance(pcet):
    p, bo = pcet
    pol = solve_polaritonic_surfaces(bo, p, 6, 6)
    k = R_GRID.index_of(-4.0)
    c = pol.vectors[k, :, 1] ** 2
    # (BO0, 1 photon) and (BO1, 0 photons) share the state at the resonance
    assert c[1] > 0.2 and c[6] > 0.2
