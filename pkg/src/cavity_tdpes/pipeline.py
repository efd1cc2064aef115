"""Scenario orchestration shared by the command line and the test suites.

A scenario is one propagation (one preset, one initial state, cavity on or
off) plus everything derived from it: observables at the storage cadence,
nuclear densities and resolved populations, and TDPES records at the frame
cadence.  TDPES frames are inverted on the fly from snapshot triplets held in
memory, so no dense snapshot store is needed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import os
import pickle
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import efactor
from .bo import BOSurfaceSet, solve_bo
from .config import RunConfig, dumps
from .grid import Grid1D, Grid3D, spectral_partial_integral
from .model import ModelParams
from .polariton import PolaritonSurfaceSet, solve_polaritonic_surfaces
from .propagator import (
    FS_AU,
    ObservableSeries,
    SplitOperator,
    WavefunctionSnapshot,
    build_initial_state,
    run,
    snap_to_steps,
)
from .qcl import force_field_from_records, histogram_density, l1_distance, propagate_trajectories, wigner_sample
from .storage import write_snapshot

log = logging.getLogger(__name__)

CACHE_ENV = "CAVITY_TDPES_CACHE"
CACHE_VERSION = "4"


@dataclass
class Surfaces:
    bo: BOSurfaceSet
    pol: PolaritonSurfaceSet | None


@dataclass
class ScenarioResult:
    name: str
    config: RunConfig
    grid: Grid3D
    series: ObservableSeries
    store_times: np.ndarray  # a.u.
    densities: np.ndarray  # (n_store, n_R)
    r_resolved: np.ndarray  # (n_store, n_el, n_R)
    photon_resolved: np.ndarray | None  # (n_store, n_max + 1, n_R)
    records: list = field(default_factory=list)  # TDPESRecord, time-ordered
    audits: list = field(default_factory=list)
    max_boundary: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def params(self) -> ModelParams:
        return self.config.params()

    def record_at(self, t_fs: float):
        """TDPES record closest in time to ``t_fs``."""
        times = np.array([r.time for r in self.records])
        k = int(np.argmin(np.abs(times - t_fs * FS_AU)))
        return self.records[k]

    def density_at(self, t_fs: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.store_times - t_fs * FS_AU)))
        return self.densities[k]

    def frame_times(self) -> np.ndarray:
        return np.array([r.time for r in self.records])


def compute_surfaces(cfg: RunConfig) -> Surfaces:
    g = cfg.grid3()
    params = cfg.params()
    bo = solve_bo(params, g.r, g.R, cfg.analysis.n_el)
    pol = None
    if cfg.model.cavity:
        pol = solve_polaritonic_surfaces(bo, params, cfg.analysis.n_el, cfg.analysis.n_ph)
    return Surfaces(bo, pol)


def _store_steps(cfg: RunConfig, n_total: int) -> list[int]:
    p = cfg.propagation
    dt = p.dt
    times = list(np.arange(0.0, p.t_final_fs + 1e-9, p.store_every_fs)) + list(p.extra_times_fs) + [p.t_final_fs]
    return sorted({min(snap_to_steps(t * FS_AU, dt), n_total) for t in times if t <= p.t_final_fs + 1e-9})


def _frame_steps(cfg: RunConfig, n_total: int, store: list[int]) -> list[int]:
    a = cfg.analysis
    dt = cfg.propagation.dt
    t_end = cfg.propagation.t_final_fs
    frames = {snap_to_steps(t * FS_AU, dt) for t in np.arange(0.0, t_end + 1e-9, a.frame_every_fs)}
    frames.update(store)
    return sorted(f for f in frames if f <= n_total)


def run_scenario(
    cfg: RunConfig,
    name: str = "run",
    surfaces: Surfaces | None = None,
    snapshot_dir: Path | None = None,
    workers: int = 1,
) -> ScenarioResult:
    """Propagate one scenario and invert it at the frame cadence."""
    t0 = _time.time()
    g = cfg.grid3()
    params = cfg.params()
    if surfaces is None:
        surfaces = compute_surfaces(cfg)
    bo, pol = surfaces.bo, surfaces.pol
    p, a = cfg.propagation, cfg.analysis
    dt = p.dt
    initial = build_initial_state(cfg.initial_state(), g, params, bo, pol, cfg.model.preset)
    prop = SplitOperator(params, g, dt, workers=workers)
    V = prop.V
    n_total = snap_to_steps(cfg.t_final, dt)
    d = max(1, snap_to_steps(a.stencil_delta, dt))
    store = _store_steps(cfg, n_total)
    frames = _frame_steps(cfg, n_total, store) if a.invert else []
    needed = set()
    for s in frames:
        needed.update({s, s + d} | ({s - d} if s - d >= 0 else set()))
    snap_steps = set()
    if snapshot_dir is not None:
        # each stored time is written with its stencil neighbours for later inversion
        snap_steps = {s + o for s in store for o in (-d, 0, d) if s + o >= 0}
    visit = needed | snap_steps
    last_needed = max(visit, default=0)

    buffer: dict[int, WavefunctionSnapshot] = {}
    records, audits = [], []
    pending = sorted(frames)

    def on_visit(snap: WavefunctionSnapshot):
        step = int(round(snap.time / dt))
        if step in snap_steps:
            meta = {"preset": cfg.model.preset, "scenario": name, "initial": cfg.initial_state().describe(),
                    "params": params.to_dict(), "dt": dt}
            write_snapshot(Path(snapshot_dir) / f"{name}_step{step:07d}.snap", g, snap.time, snap.psi, meta)
        if step in needed:
            buffer[step] = snap.copy()
        while pending and pending[0] + d <= step:
            s = pending.pop(0)
            cur, nxt = buffer[s], buffer[s + d]
            prev = buffer.get(s - d)
            mode = a.gd_mode if prev is not None else "forward"
            rec = efactor.tdpes_pipeline(
                prev if mode == "centered" else None, cur, nxt, params, pol, bo,
                threshold=a.threshold, potential=V, mode=mode,
            )
            records.append(rec)
            audits.append(efactor.energy_audit(cur, rec, prop.energy(cur.psi), params.M))
            for k in [k for k in buffer if not pending or k < pending[0] - d]:
                del buffer[k]

    densities, r_res, ph_res, times = [], [], [], []

    def on_store(snap: WavefunctionSnapshot, rec: dict):
        times.append(snap.time)
        densities.append(efactor.nuclear_density(snap))
        r_res.append(efactor.r_resolved_bo_populations(snap, bo))
        if g.has_photon:
            ph_res.append(efactor.photon_resolved_densities(snap, a.photon_n_max, params.omega_c))

    # propagate past t_final by the stencil width so the last frame has its pair
    t_run = max(n_total, last_needed) * dt
    series = run(
        prop, initial, t_run, store_steps=store, bo=bo, boundary_tol=p.boundary_tol,
        on_store=on_store, visit_steps=visit, on_visit=on_visit,
    )
    # drop observable rows that only exist because of the stencil overrun
    keep = [i for i, r in enumerate(series.rows) if r["step"] <= n_total]
    series.rows = [series.rows[i] for i in keep]
    bmax = {}
    for r in series.rows:
        for k, v in r["boundary"].items():
            bmax[k] = max(bmax.get(k, 0.0), v)
    return ScenarioResult(
        name=name,
        config=cfg,
        grid=g,
        series=series,
        store_times=np.array(times)[keep],
        densities=np.array(densities)[keep],
        r_resolved=np.array(r_res)[keep],
        photon_resolved=np.array(ph_res)[keep] if ph_res else None,
        records=records,
        audits=audits,
        max_boundary=bmax,
        wall_time=_time.time() - t0,
    )


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------
def batch_configs(cfg: RunConfig) -> dict[str, RunConfig]:
    """The scenarios compared in each case study.

    PCET: cavity-free, factorized (first excited BO state, photon vacuum) and
    polaritonic (second polaritonic state).  ELEX: first excited BO state
    with the photon vacuum, with and without the cavity.
    """
    m = cfg.model
    i = cfg.initial
    if cfg.run.batch == "pcet":
        fac = dataclasses.replace(i, kind="bo_factorized", level=1)
        return {
            "cavity_free": cfg.replace(model=dataclasses.replace(m, cavity=False), initial=fac),
            "factorized": cfg.replace(model=dataclasses.replace(m, cavity=True), initial=fac),
            "polaritonic": cfg.replace(model=dataclasses.replace(m, cavity=True),
                                       initial=dataclasses.replace(i, kind="polaritonic", level=1)),
        }
    if cfg.run.batch == "elex":
        fac = dataclasses.replace(i, kind="bo_factorized", level=1)
        return {
            "cavity_free": cfg.replace(model=dataclasses.replace(m, cavity=False), initial=fac),
            "in_cavity": cfg.replace(model=dataclasses.replace(m, cavity=True), initial=fac),
        }
    return {"run": cfg}


# ---------------------------------------------------------------------------
# quasiclassical comparison
# ---------------------------------------------------------------------------
@dataclass
class QclComparison:
    mode: str
    n_traj: int
    times: np.ndarray  # a.u.
    exact: np.ndarray  # (n_times, n_R)
    histograms: np.ndarray  # (n_times, n_R)
    l1: np.ndarray
    exits: int


def comparison_times(cfg: RunConfig, frame_times: np.ndarray) -> np.ndarray:
    """Frame times nearest to every ``compare_every_fs`` from ``compare_from_fs``."""
    q = cfg.qcl
    t_end = cfg.propagation.t_final_fs
    wanted = np.arange(q.compare_from_fs, t_end + 1e-9, q.compare_every_fs)
    return np.array([frame_times[np.argmin(np.abs(frame_times - t * FS_AU))] for t in wanted])


def run_qcl(records, cfg: RunConfig, mode: str, n_traj: int | None = None, seed: int | None = None,
            dt: float | None = None, times=None) -> QclComparison:
    """Trajectories on the ``mode`` surface compared with the exact densities."""
    q = cfg.qcl
    n_traj = q.n_traj if n_traj is None else n_traj
    seed = q.seed if seed is None else seed
    dt = q.dt if dt is None else dt
    frame_times = np.array([r.time for r in records])
    if len(frame_times) > 1 and np.diff(frame_times).max() > 0.75 * FS_AU:
        raise ValueError("TDPES frames are too sparse for trajectories; use a frame cadence of 0.5 fs or finer")
    ff = force_field_from_records(records, mode)
    times = comparison_times(cfg, frame_times) if times is None else np.asarray(times, dtype=float)
    t_final = float(np.ceil(times.max() / dt) * dt) if len(times) else dt
    ens = wigner_sample(cfg.initial.R0, cfg.initial.alpha, n_traj, seed, mode)
    out = propagate_trajectories(ens, ff, cfg.params().M, dt, t_final, store_times=list(times))
    R_grid = records[0].R_grid
    exact, hist, l1 = [], [], []
    for t in times:
        rec = records[int(np.argmin(np.abs(frame_times - t)))]
        ex = rec.density / np.sum(R_grid.weights * rec.density)
        k = int(np.argmin(np.abs(out.times - t)))
        h = histogram_density(out.positions[k], R_grid)
        exact.append(ex)
        hist.append(h)
        l1.append(l1_distance(h, ex, R_grid))
    return QclComparison(mode, n_traj, np.asarray(times), np.array(exact), np.array(hist), np.array(l1), out.exits)


def repropagation_check(result: ScenarioResult, t_end_fs: float = 25.0, dt: float | None = None) -> dict:
    """Propagate chi on the extracted surface and compare with the exact density."""
    recs = [r for r in result.records if r.time <= t_end_fs * FS_AU + 1e-9]
    times = np.array([r.time for r in recs])
    eps = np.array([r.eps_total for r in recs])
    masks = np.array([r.mask for r in recs])
    r0 = recs[0]
    chi0 = np.sqrt(r0.density) * np.exp(1j * r0.phase)
    dt = result.config.propagation.dt if dt is None else dt
    dens, info = efactor.repropagate_nuclear(
        times, eps, masks, chi0, result.grid.R, result.params.M, dt, times
    )
    w = result.grid.R.weights
    l1 = np.array([np.sum(w * np.abs(dn - r.density)) for dn, r in zip(dens, recs)])
    return {"times": times, "l1": l1, "max_l1": float(l1.max()), **info}


# ---------------------------------------------------------------------------
# caching
# ---------------------------------------------------------------------------
def config_key(cfg: RunConfig, name: str) -> str:
    h = hashlib.sha256((CACHE_VERSION + name + dumps(cfg)).encode()).hexdigest()
    return h[:20]


def cached_scenario(cfg: RunConfig, name: str, cache_dir=None, **kw) -> ScenarioResult:
    """``run_scenario`` memoized on disk when a cache directory is configured.

    The directory comes from ``cache_dir`` or the ``CAVITY_TDPES_CACHE``
    environment variable; without either the scenario is always recomputed.
    """
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    if not cache_dir:
        return run_scenario(cfg, name, **kw)
    path = Path(cache_dir) / f"{name}-{config_key(cfg, name)}.pkl"
    if path.exists():
        with open(path, "rb") as fh:
            return pickle.load(fh)
    res = run_scenario(cfg, name, **kw)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        pickle.dump(res, fh)
    os.replace(tmp, path)
    return res


def trapped_fraction(density: np.ndarray, R_grid: Grid1D, cut: float = -1.0) -> float:
    """``int_{R < cut} |chi|^2 dR`` of the Fourier-interpolated density."""
    return spectral_partial_integral(density, R_grid, cut)


def invert_snapshot_dir(directory, cfg: RunConfig, name: str, surfaces: Surfaces | None = None):
    """TDPES records and energy audits for every stored time in a snapshot directory.

    Each stored time needs its two stencil neighbours (``analysis.stencil_delta``
    apart); the first stored time may use the forward stencil.  A missing
    neighbour raises ``FileNotFoundError`` naming the time.
    """
    from .storage import read_snapshot

    directory = Path(directory)
    files = sorted(directory.glob(f"{name}_step*.snap"))
    if not files:
        raise FileNotFoundError(f"no snapshots named {name}_step*.snap in {directory}")
    snaps = {}
    for f in files:
        g, t, psi, meta = read_snapshot(f)
        step = int(f.stem.rsplit("step", 1)[1])
        snaps[step] = WavefunctionSnapshot(g, t, psi, meta.get("preset", ""), meta.get("initial"))
    params = cfg.params()
    if surfaces is None:
        surfaces = compute_surfaces(cfg)
    a = cfg.analysis
    dt = cfg.propagation.dt
    d = max(1, snap_to_steps(a.stencil_delta, dt))
    n_total = snap_to_steps(cfg.t_final, dt)
    g0 = next(iter(snaps.values())).grid
    prop = SplitOperator(params, g0, dt)
    records, audits = [], []
    for s in _store_steps(cfg, n_total):
        if s not in snaps:
            continue
        prev, nxt = snaps.get(s - d), snaps.get(s + d)
        if nxt is None or (prev is None and s - d >= 0 and a.gd_mode == "centered"):
            raise FileNotFoundError(f"stencil partner missing for t={s * dt / FS_AU:.3f} fs")
        mode = a.gd_mode if prev is not None else "forward"
        rec = efactor.tdpes_pipeline(
            prev if mode == "centered" else None, snaps[s], nxt, params, surfaces.pol, surfaces.bo,
            threshold=a.threshold, potential=prop.V, mode=mode,
        )
        records.append(rec)
        audits.append(efactor.energy_audit(snaps[s], rec, prop.energy(snaps[s].psi), params.M))
    return records, audits
