import numpy as np
import pytest

from cavity_tdpes.bo import solve_bo
from cavity_tdpes.grid import Grid1D, Grid3D
from cavity_tdpes.model import preset
from cavity_tdpes.polariton import solve_polaritonic_surfaces
from cavity_tdpes.propagator import (
    FS_AU,
    InitialState,
    NumericalError,
    SplitOperator,
    build_initial_state,
    observables,
    run,
    steps_for,
)
from cavity_tdpes.verify import check_free_packet

R_AX = Grid1D(-9, 9, 64)
R_EL = Grid1D(-30, 30, 64)
Q_AX = Grid1D(-32, 32, 40)


@pytest.fixture(scope="module")
def setup():
    p = preset("pcet")
    bo = solve_bo(p, R_EL, R_AX, 6)
    pol = solve_polaritonic_surfaces(bo, p, 6, 6)
    return p, bo, pol


def _nuclear_density(psi, g):
    return np.einsum("rRq,r,q->R", np.abs(psi) ** 2, g.r.weights, g.q_weights)


def test_fs_constant():
    assert FS_AU == pytest.approx(41.341374576, abs=1e-9)


def test_steps_for_requires_integral_count():
    assert steps_for(1.0, 0.1) == 10
    with pytest.raises(ValueError):
        steps_for(1.05, 0.1)


def test_initial_states(setup):
    p, bo, pol = setup
    g = Grid3D(R_EL, R_AX, Q_AX)
    fac = build_initial_state(InitialState("bo_factorized", 0), g, p, bo)
    prop = SplitOperator(p, g, 0.1)
    rec = observables(fac, prop, bo)
    assert fac.norm() == pytest.approx(1.0, abs=1e-12)
    assert rec["pops"][0] == pytest.approx(1.0, abs=1e-10)
    assert abs(rec["n_ph"]) < 1e-10
    polst = build_initial_state(InitialState("polaritonic", 1), g, p, bo, pol)
    assert polst.norm() == pytest.approx(1.0, abs=1e-12)
    # the dressed state carries photons and two BO components
    rec = observables(polst, prop, bo)
    assert rec["n_ph"] > 1e-3
    assert rec["pops"][:2].sum() > 0.99


def test_short_run_conserves_norm_and_energy(setup):
    p, bo, pol = setup
    g = Grid3D(R_EL, R_AX, Q_AX)
    init = build_initial_state(InitialState("polaritonic", 1), g, p, bo, pol)
    series = run(SplitOperator(p, g, 0.1), init, 200 * 0.1, store_every=50, bo=bo, boundary_tol=None)
    norm, energy = series.column("norm"), series.column("energy")
    assert np.max(np.abs(norm - 1)) < 1e-10
    assert np.max(np.abs(energy - energy[0])) < 1e-6
    assert len(series.rows) == 5


def test_strang_error_is_second_order(setup):
    p, bo, _ = setup
    g = Grid3D(R_EL, R_AX, None)
    init = build_initial_state(InitialState("bo_factorized", 1), g, p, bo)
    T = 8.0
    ref = SplitOperator(p, g, 0.025).advance(init.psi.copy(), 320)
    errs = []
    for dt in (0.4, 0.2):
        out = SplitOperator(p, g, dt).advance(init.psi.copy(), int(round(T / dt)))
        errs.append(np.sqrt(np.sum(np.abs(out - ref) ** 2 * g.volume_weights())))
    assert 3.3 < errs[0] / errs[1] < 4.7


def test_decoupled_cavity_matches_cavity_free(setup):
    p, bo, _ = setup
    p0 = p.with_(lam=0.0)
    gq = Grid3D(R_EL, R_AX, Q_AX)
    g0 = Grid3D(R_EL, R_AX, None)
    a = build_initial_state(InitialState("bo_factorized", 0), gq, p0, bo)
    b = build_initial_state(InitialState("bo_factorized", 0), g0, p0, bo)
    a_out = SplitOperator(p0, gq, 0.1).advance(a.psi, 100)
    b_out = SplitOperator(p0, g0, 0.1).advance(b.psi, 100)
    diff = np.abs(_nuclear_density(a_out, gq) - _nuclear_density(b_out, g0))
    assert np.sum(diff * R_AX.weights) < 1e-8


def test_vacuum_stays_empty_without_coupling(setup):
    p, bo, _ = setup
    p0 = p.with_(lam=0.0)
    g = Grid3D(R_EL, R_AX, Q_AX)
    init = build_initial_state(InitialState("bo_factorized", 0), g, p0, bo)
    series = run(SplitOperator(p0, g, 0.1), init, 5.0, store_every=10, boundary_tol=None)
    assert np.max(np.abs(series.column("n_ph"))) < 1e-10


def test_free_packet_spreading_matches_analytic():
    check = check_free_packet()
    assert check.passed, check.line()


def test_boundary_guard_aborts(setup):
    p, bo, _ = setup
    g = Grid3D(R_EL, Grid1D(-5, 5, 32), None)
    bo_s = solve_bo(p, R_EL, g.R, 2)
    init = build_initial_state(InitialState("bo_factorized", 0, R0=-4.0), g, p, bo_s)
    with pytest.raises(NumericalError, match="boundary"):
        run(SplitOperator(p, g, 0.1), init, 1.0, boundary_tol=1e-10)


def test_store_callbacks_receive_copies(setup):
    p, bo, _ = setup
    g = Grid3D(R_EL, R_AX, None)
    init = build_initial_state(InitialState("bo_factorized", 0), g, p, bo)
    kept, seen = [], []
    run(SplitOperator(p, g, 0.1), init, 2.0, store_steps=[5], on_store=lambda s, r: kept.append(s),
        visit_steps=[3], on_visit=lambda s: seen.append(s.time), boundary_tol=None)
    assert [round(s.time / 0.1) for s in kept] == [0, 5, 20]
    assert seen == [pytest.approx(0.3)]
    assert not np.shares_memory(kept[0].psi, kept[1].psi)
