"""End-to-end acceptance criteria at default resolution.

Scenario results are computed once per session.  Setting the environment
variable ``CAVITY_TDPES_CACHE`` to a directory memoizes them on disk between
sessions.  Every test records a one-line PASS/FAIL summary that pytest prints
at the end of the run.
"""

import dataclasses
import time

import numpy as np
import pytest

from cavity_tdpes.config import default_config
from cavity_tdpes.propagator import FS_AU
from cavity_tdpes.pipeline import (
    batch_configs,
    cached_scenario,
    repropagation_check,
    run_qcl,
    run_scenario,
    trapped_fraction,
)
from cavity_tdpes.verify import (
    check_decoupled_limit,
    check_eigensolver,
    check_free_packet,
    check_quadrature,
    check_spectral_derivative,
    coarse_config,
    resonance_checks,
)

pytestmark = pytest.mark.slow


def _batch(preset):
    cfg = default_config(preset).with_overrides([f"run.batch={preset}"])
    return batch_configs(cfg)


@pytest.fixture(scope="session")
def pcet():
    out = {}
    for name, cfg in _batch("pcet").items():
        out[name] = cached_scenario(cfg, name)
    return out


@pytest.fixture(scope="session")
def elex():
    return {name: cached_scenario(cfg, name) for name, cfg in _batch("elex").items()}


def _max_dev(series, key, ref=None):
    col = series.column(key)
    return float(np.max(np.abs(col - (col[0] if ref is None else ref))))


# ---------------------------------------------------------------------------
def test_criterion_01_conservation(pcet, criterion):
    norm_err = max(_max_dev(r.series, "norm", 1.0) for r in pcet.values())
    energy_err = max(_max_dev(r.series, "energy") for r in pcet.values())
    wall = sum(r.wall_time for r in pcet.values())
    cfg = coarse_config(36.0)
    cfg = cfg.replace(analysis=dataclasses.replace(cfg.analysis, invert=False))
    t0 = time.time()
    run_scenario(cfg, "coarse")
    coarse_wall = time.time() - t0
    ok = norm_err < 1e-8 and energy_err < 1e-6 and wall <= 3600 and coarse_wall <= 600
    criterion(1, ok, f"norm {norm_err:.1e} < 1e-8, energy {energy_err:.1e} < 1e-6, "
                     f"PCET batch {wall:.0f} s <= 3600, coarse {coarse_wall:.0f} s <= 600 (single core)")
    assert ok


def test_criterion_02_decoupled_limit(criterion):
    cfg = coarse_config(36.0).with_overrides(
        ["model.lam=0.0", "initial.kind=bo_factorized", "analysis.invert=false"])
    surf_err = check_decoupled_limit(default_config("pcet")).value
    cav = run_scenario(cfg, "lam0")
    free = run_scenario(cfg.with_overrides(["model.cavity=false"]), "free")
    w = cav.grid.R.weights
    l1 = max(float(np.sum(w * np.abs(a - b))) for a, b in zip(cav.densities, free.densities))
    ok = surf_err < 1e-10 and l1 < 1e-8 and len(cav.densities) == len(free.densities)
    criterion(2, ok, f"surfaces {surf_err:.1e} < 1e-10, density L1 {l1:.1e} < 1e-8 over 0-36 fs")
    assert ok


def test_criterion_03_resonances(criterion):
    checks = resonance_checks()
    ok = all(c.passed for c in checks)
    criterion(3, ok, "; ".join(c.note for c in checks) + " (5%)")
    assert ok, [c.line() for c in checks]


def test_criterion_04_ef_self_consistency(pcet, elex, criterion):
    parts, ok = [], True
    for name, res in {**pcet, **elex}.items():
        rep = repropagation_check(res, 25.0)
        recon = max(r.diagnostics["reconstruction_error"] for r in res.records)
        gauge = max(r.diagnostics["gauge_residual"] for r in res.records)
        ok &= rep["max_l1"] < 0.05 and recon < 1e-10 and gauge < 1e-6
        parts.append(f"{res.config.model.preset}/{name} L1 {rep['max_l1']:.1e} recon {recon:.0e} gauge {gauge:.0e}")
    criterion(4, ok, "; ".join(parts))
    assert ok


def test_criterion_05_energy_identities(pcet, elex, criterion):
    worst1 = max(abs(a["residual_total"]) for r in {**pcet, **elex}.values() for a in r.audits)
    worst2 = max(abs(a["residual_gd"]) for r in {**pcet, **elex}.values() for a in r.audits)
    n = sum(len(r.audits) for r in {**pcet, **elex}.values())
    ok = worst1 < 1e-4 and worst2 < 1e-4
    criterion(5, ok, f"{n} analysis times: total {worst1:.1e}, gd {worst2:.1e} (< 1e-4)")
    assert ok


def test_criterion_06_trapping_order(pcet, criterion):
    f = {k: trapped_fraction(r.density_at(35.8), r.grid.R) for k, r in pcet.items()}
    ok = f["factorized"] > f["polaritonic"] > f["cavity_free"] and \
        f["cavity_free"] < 0.05 * min(f["factorized"], f["polaritonic"])
    criterion(6, ok, ", ".join(f"{k} {v:.4f}" for k, v in f.items()))
    assert ok


def test_criterion_07_elex_excitation(elex, criterion):
    cav = float(np.max(elex["in_cavity"].series.column("pop_3")))
    free = float(np.max(elex["cavity_free"].series.column("pop_3")))
    ok = cav >= 2 * free and free < 0.05
    criterion(7, ok, f"max |C_2|^2 in cavity {cav:.4f}, cavity-free {free:.4f} (ratio {cav / free:.1f} >= 2)")
    assert ok


_qcl_lines: dict = {}


@pytest.mark.parametrize("preset, name", [("pcet", "polaritonic"), ("elex", "in_cavity")])
def test_criterion_08_quasiclassical(preset, name, criterion, request):
    res = request.getfixturevalue(preset)[name]
    cfg = res.config
    full = run_qcl(res.records, cfg, "full", n_traj=3000)
    wpol = run_qcl(res.records, cfg, "wpol", n_traj=3000)
    small = run_qcl(res.records, cfg, "full", n_traj=2000, times=full.times)
    conv = max(float(np.sum(res.grid.R.weights * np.abs(a - b))) for a, b in zip(small.histograms, full.histograms))
    ok = bool(np.all(full.l1 < wpol.l1)) and conv < 0.05
    lost = [f"{t / FS_AU:.0f} fs ({a:.3f} vs {b:.3f})" for t, a, b in zip(full.times, full.l1, wpol.l1) if a >= b]
    line = (f"{preset}: L1 full {full.l1.min():.3f}-{full.l1.max():.3f} vs wpol {wpol.l1.min():.3f}-{wpol.l1.max():.3f} "
            f"at {len(full.times)} times >= 10 fs, full not better at {lost or 'none'}; "
            f"N 2000 vs 3000 L1 {conv:.3f} < 0.05")
    # both presets report into the same criterion line
    _qcl_lines[preset] = (ok, line)
    passed = all(v[0] for v in _qcl_lines.values())
    criterion(8, passed, "; ".join(v[1] for v in _qcl_lines.values()))
    assert ok


def _zero_crossing(force, R_grid, mask, lo=-3.0, hi=-1.0):
    x = R_grid.points
    sel = mask & (x >= lo) & (x <= hi)
    idx = np.flatnonzero(sel)
    f = force[idx]
    ok = np.isfinite(f)
    f, xs = f[ok], x[idx][ok]
    cross = np.flatnonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0)
    return [float(xs[i] - f[i] * (xs[i + 1] - xs[i]) / (f[i + 1] - f[i])) for i in cross]


def test_criterion_09_early_anchors(pcet, criterion):
    rec = pcet["polaritonic"].record_at(3.39)
    m = rec.mask
    w = rec.R_grid.weights[m]
    ratio = np.sqrt(np.sum(w * rec.force_gd[m] ** 2) / np.sum(w * rec.force_total[m] ** 2))
    z_fac = _zero_crossing(pcet["factorized"].record_at(17.42).force_total, rec.R_grid,
                           pcet["factorized"].record_at(17.42).mask)
    z_pol = _zero_crossing(pcet["polaritonic"].record_at(21.29).force_total, rec.R_grid,
                           pcet["polaritonic"].record_at(21.29).mask)
    ok = ratio < 0.05 and bool(z_fac) and bool(z_pol)
    criterion(9, ok, f"GD/total force norm at 3.39 fs {ratio:.3f} < 0.05; force zeros in [-3,-1]: "
                     f"factorized 17.42 fs {['%.2f' % z for z in z_fac]}, polaritonic 21.29 fs {['%.2f' % z for z in z_pol]}")
    assert ok


def _headline(res):
    s = res.series
    out = {k: s.column(k) for k in ("dip_e", "dip_n")}
    for i in range(3):
        out[f"pop_{i + 1}"] = s.column(f"pop_{i + 1}")
    out["trapped"] = np.array([trapped_fraction(res.density_at(35.8), res.grid.R)])
    return out


def _relative_change(a, b):
    """Largest change over stored times relative to the largest magnitude of the series."""
    return float(np.max(np.abs(a - b)) / np.max(np.abs(a)))


def test_criterion_10_numerics(pcet, criterion):
    oracles = [check_spectral_derivative(), check_quadrature(), check_eigensolver(), check_free_packet()]
    base_cfg = pcet["polaritonic"].config
    base = _headline(pcet["polaritonic"])
    g = base_cfg.grid3()
    refinements = {
        "dt/2": [f"propagation.dt={base_cfg.propagation.dt / 2}"],
        "2x r": [f"grid.n_r={2 * g.r.n}"],
        "2x R": [f"grid.n_R={2 * g.R.n}"],
        "2x q": [f"grid.n_q={2 * g.q.n}"],
    }
    worst, parts = 0.0, []
    for label, over in refinements.items():
        cfg = base_cfg.with_overrides(over + ["analysis.invert=false"])
        res = cached_scenario(cfg, "polaritonic_refined")
        fine = _headline(res)
        change = {k: _relative_change(base[k], fine[k]) for k in base}
        k = max(change, key=change.get)
        worst = max(worst, change[k])
        parts.append(f"{label} {change[k]:.1e} ({k})")
    ok = all(c.passed for c in oracles) and worst < 0.01
    criterion(10, ok, f"oracles {sum(c.passed for c in oracles)}/{len(oracles)}; refinement: " + ", ".join(parts))
    assert ok, [c.line() for c in oracles]
