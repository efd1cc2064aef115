"""Split-operator propagation of Psi(r, R, q, t) and its observables."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
import scipy.fft as sfft

from .bo import BOSurfaceSet
from .grid import Grid3D, GridError, wavenumbers
from .model import ModelParams, PotentialField, total_potential_grid
from .polariton import PolaritonSurfaceSet, photon_eigenfunctions, polaritonic_states
from .storage import write_csv

log = logging.getLogger(__name__)

FS_AU = 41.341374576  # atomic units of time per femtosecond

__all__ = [
    "FS_AU",
    "NumericalError",
    "InitialState",
    "WavefunctionSnapshot",
    "ObservableSeries",
    "SplitOperator",
    "build_initial_state",
    "step",
    "run",
    "observables",
    "steps_for",
]


class NumericalError(RuntimeError):
    """Non-finite values or a wavefunction reaching the box boundary."""


@dataclass(frozen=True)
class InitialState:
    """Gaussian nuclear packet ``exp(-alpha (R - R0)^2)`` times an electron-photon state.

    ``kind`` is ``"bo_factorized"`` (BO state ``level`` with the photon
    vacuum) or ``"polaritonic"`` (polaritonic eigenstate ``level``).  Levels
    count from 0.
    """

    kind: str = "polaritonic"
    level: int = 1
    R0: float = -4.0
    alpha: float = 2.85

    def __post_init__(self):
        if self.kind not in ("bo_factorized", "polaritonic"):
            raise ValueError(f"unknown initial-state kind {self.kind!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.level < 0:
            raise ValueError("level must be non-negative")

    def describe(self) -> dict:
        return {"kind": self.kind, "level": self.level, "R0": self.R0, "alpha": self.alpha}


@dataclass
class WavefunctionSnapshot:
    grid: Grid3D
    time: float  # atomic units
    psi: np.ndarray
    preset: str = ""
    initial: dict | None = None

    @property
    def time_fs(self) -> float:
        return self.time / FS_AU

    def norm(self) -> float:
        return float(np.sum(np.abs(self.psi) ** 2 * self.grid.volume_weights()))

    def copy(self) -> "WavefunctionSnapshot":
        return WavefunctionSnapshot(self.grid, self.time, self.psi.copy(), self.preset, self.initial)


def _normalize(psi: np.ndarray, grid: Grid3D) -> np.ndarray:
    return psi / np.sqrt(np.sum(np.abs(psi) ** 2 * grid.volume_weights()))


def build_initial_state(
    initial: InitialState,
    grid: Grid3D,
    params: ModelParams,
    bo: BOSurfaceSet,
    pol: PolaritonSurfaceSet | None = None,
    preset: str = "",
) -> WavefunctionSnapshot:
    if bo.r_grid != grid.r or bo.R_grid != grid.R:
        raise GridError("BO surfaces were computed on different grids")
    R = grid.R.points
    nuc = np.exp(-initial.alpha * (R - initial.R0) ** 2)
    if initial.kind == "bo_factorized":
        if initial.level >= bo.n_el:
            raise ValueError(f"BO level {initial.level} not available (n_el={bo.n_el})")
        el = bo.states[:, :, initial.level].T  # (n_r, n_R)
        if grid.has_photon:
            xi0 = photon_eigenfunctions(grid.q.points, params.omega_c, 0)[0]
        else:
            xi0 = np.ones(1)
        psi = el[:, :, None] * nuc[None, :, None] * xi0[None, None, :]
    else:
        if not grid.has_photon:
            raise ValueError("polaritonic initial state needs a photon axis")
        if pol is None:
            raise ValueError("polaritonic initial state needs polaritonic surfaces")
        if initial.level >= pol.size:
            raise ValueError(f"polaritonic level {initial.level} not available")
        psi = polaritonic_states(pol, initial.level, bo, grid.q) * nuc[None, :, None]
    psi = _normalize(psi.astype(np.complex128), grid)
    return WavefunctionSnapshot(grid, 0.0, psi, preset, initial.describe())


class SplitOperator:
    """Strang splitting ``e^{-iV dt/2} e^{-iT dt} e^{-iV dt/2}`` with 3D FFTs."""

    def __init__(
        self,
        params: ModelParams,
        grid: Grid3D,
        dt: float,
        potential: PotentialField | None = None,
        workers: int = 1,
    ):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.params = params
        self.grid = grid
        self.dt = float(dt)
        self.workers = workers
        field_ = potential if potential is not None else total_potential_grid(params, grid)
        if field_.values.shape != grid.shape:
            raise GridError("potential field does not match grid")
        self.V = field_.values
        kr = wavenumbers(grid.r)[:, None, None]
        kR = wavenumbers(grid.R)[None, :, None]
        self.T_r = 0.5 * kr**2
        self.T_R = 0.5 * kR**2 / params.M
        if grid.has_photon:
            self.T_q = 0.5 * wavenumbers(grid.q)[None, None, :] ** 2
        else:
            self.T_q = np.zeros((1, 1, 1))
        T = self.T_r + self.T_R + self.T_q
        self.kin_phase = np.exp(-1j * self.dt * T)
        self.half_phase = np.exp(-0.5j * self.dt * self.V)
        self.full_phase = self.half_phase * self.half_phase

    def _kick(self, psi):
        psi = sfft.fftn(psi, overwrite_x=True, workers=self.workers)
        psi *= self.kin_phase
        return sfft.ifftn(psi, overwrite_x=True, workers=self.workers)

    def advance(self, psi: np.ndarray, n_steps: int) -> np.ndarray:
        """Apply ``n_steps`` steps; adjacent potential half-steps are fused.

        ``psi`` may be overwritten; use the returned array.
        """
        if n_steps <= 0:
            return psi
        psi *= self.half_phase
        for s in range(n_steps):
            psi = self._kick(psi)
            psi *= self.full_phase if s < n_steps - 1 else self.half_phase
        return psi

    def step(self, snapshot: WavefunctionSnapshot) -> WavefunctionSnapshot:
        out = snapshot.copy()
        out.psi = self.advance(out.psi, 1)
        out.time = snapshot.time + self.dt
        return out

    # -- expectation values -------------------------------------------------
    def kinetic_parts(self, psi: np.ndarray) -> tuple[float, float, float]:
        """``<T_r>, <T_R>, <T_q>`` by Parseval in the plane-wave basis."""
        g = self.grid
        spec = np.abs(sfft.fftn(psi, workers=self.workers)) ** 2
        dv = g.r.spacing * g.R.spacing * (g.q.spacing if g.has_photon else 1.0)
        scale = dv / psi.size
        t_r = float(np.sum(spec * self.T_r) * scale)
        t_R = float(np.sum(spec * self.T_R) * scale)
        t_q = float(np.sum(spec * self.T_q) * scale) if g.has_photon else 0.0
        return t_r, t_R, t_q

    def energy(self, psi: np.ndarray) -> float:
        w = self.grid.volume_weights()
        return sum(self.kinetic_parts(psi)) + float(np.sum(w * self.V * np.abs(psi) ** 2))


def step(snapshot: WavefunctionSnapshot, dt: float, propagator: SplitOperator) -> WavefunctionSnapshot:
    """One split-operator step of length ``dt`` (must match the propagator)."""
    if abs(dt - propagator.dt) > 1e-15 * max(1.0, dt):
        raise ValueError("dt differs from the propagator's prebuilt phases")
    return propagator.step(snapshot)


def steps_for(t: float, dt: float, tol: float = 1e-6) -> int:
    """Number of steps in ``t``; raises unless ``t/dt`` is integral."""
    n = round(t / dt)
    if abs(n * dt - t) > tol * dt:
        raise ValueError(f"t={t} is not an integral number of steps of dt={dt}")
    return int(n)


def snap_to_steps(t: float, dt: float) -> int:
    """Nearest step index to time ``t`` (atomic units)."""
    return int(round(t / dt))


def boundary_density(psi: np.ndarray, grid: Grid3D) -> dict[str, float]:
    """Marginal densities at the first and last point of every axis."""
    rho = np.abs(psi) ** 2
    wr, wR, wq = grid.r.weights, grid.R.weights, grid.q_weights
    out = {}
    m_r = np.einsum("rRq,R,q->r", rho, wR, wq)
    m_R = np.einsum("rRq,r,q->R", rho, wr, wq)
    out["r"] = float(max(m_r[0], m_r[-1]))
    out["R"] = float(max(m_R[0], m_R[-1]))
    if grid.has_photon:
        m_q = np.einsum("rRq,r,R->q", rho, wr, wR)
        out["q"] = float(max(m_q[0], m_q[-1]))
    return out


@dataclass
class ObservableSeries:
    n_pop: int = 0
    rows: list = field(default_factory=list)

    COLUMNS = ("time_fs", "time_au", "norm", "energy", "dip_e", "dip_n", "n_ph")

    def append(self, rec: dict) -> None:
        self.rows.append(rec)

    def column(self, name: str) -> np.ndarray:
        if name.startswith("pop_"):
            i = int(name[4:]) - 1
            return np.array([r["pops"][i] for r in self.rows])
        return np.array([r[name] for r in self.rows])

    def pops(self) -> np.ndarray:
        return np.array([r["pops"] for r in self.rows])

    @property
    def times(self) -> np.ndarray:
        return self.column("time_au")

    def header(self) -> list[str]:
        return list(self.COLUMNS) + [f"pop_{i + 1}" for i in range(self.n_pop)]

    def to_csv(self, path) -> None:
        cols = [self.column(c) for c in self.COLUMNS]
        if self.n_pop:
            p = self.pops()
            cols += [p[:, i] for i in range(self.n_pop)]
        write_csv(path, self.header(), cols)


def observables(
    snapshot: WavefunctionSnapshot, propagator: SplitOperator, bo: BOSurfaceSet | None = None
) -> dict:
    """Norm, energy, dipoles, photon number and BO populations of a snapshot."""
    g = snapshot.grid
    if g != propagator.grid:
        raise GridError("snapshot and propagator grids differ")
    psi = snapshot.psi
    w = g.volume_weights()
    rho = np.abs(psi) ** 2 * w
    norm = float(rho.sum())
    r, R, q = g.mesh()
    t_r, t_R, t_q = propagator.kinetic_parts(psi)
    pot = float(np.sum(rho * propagator.V))
    rec = {
        "time_au": snapshot.time,
        "time_fs": snapshot.time / FS_AU,
        "norm": norm,
        "energy": t_r + t_R + t_q + pot,
        "kinetic_nuclear": t_R,
        "dip_e": float(np.sum(rho * r)),
        "dip_n": float(np.sum(rho * R)),
    }
    if g.has_photon:
        wc = propagator.params.omega_c
        q2 = float(np.sum(rho * q * q))
        rec["n_ph"] = (t_q + 0.5 * wc * wc * q2) / wc - 0.5 * norm
    else:
        rec["n_ph"] = 0.0
    if bo is not None:
        rec["pops"] = bo_populations(psi, g, bo)
    rec["boundary"] = boundary_density(psi, g)
    return rec


def bo_projections(psi: np.ndarray, grid: Grid3D, bo: BOSurfaceSet) -> np.ndarray:
    """``C_i(R, q) = <Phi_i(R)|Psi(R, q)>_r``, shape ``(n_el, n_R, n_q)``."""
    if bo.r_grid != grid.r or bo.R_grid != grid.R:
        raise GridError("BO surfaces were computed on different grids")
    return np.einsum("r,Rri,rRq->iRq", grid.r.weights, bo.states, psi, optimize=True)


def bo_populations(psi: np.ndarray, grid: Grid3D, bo: BOSurfaceSet) -> np.ndarray:
    c2 = np.abs(bo_projections(psi, grid, bo)) ** 2
    return np.einsum("iRq,R,q->i", c2, grid.R.weights, grid.q_weights)


def run(
    propagator: SplitOperator,
    initial: WavefunctionSnapshot,
    t_final: float,
    store_steps: Iterable[int] | None = None,
    store_every: int | None = None,
    on_store: Callable[[WavefunctionSnapshot, dict], None] | None = None,
    bo: BOSurfaceSet | None = None,
    boundary_tol: float | None = 1e-8,
    visit_steps: Iterable[int] | None = None,
    on_visit: Callable[[WavefunctionSnapshot], None] | None = None,
) -> ObservableSeries:
    """Propagate from ``initial`` to ``t_final`` (atomic units).

    Observables are evaluated at step 0, the final step, every
    ``store_every`` steps and at each index in ``store_steps``;
    ``on_store(snapshot, record)`` receives an independent copy at each of
    those steps.  With ``boundary_tol`` set, a marginal density above it at
    any box edge aborts the run.  ``on_visit(snapshot)`` is called at every
    index in ``visit_steps`` without computing observables; it receives the
    live array and must copy what it keeps.
    """
    dt = propagator.dt
    n_total = steps_for(t_final - initial.time, dt)
    marks = set(store_steps or ())
    if store_every:
        marks.update(range(0, n_total + 1, store_every))
    marks.update((0, n_total))
    marks = {m for m in marks if 0 <= m <= n_total}
    visits = {v for v in (visit_steps or ()) if 0 <= v <= n_total}
    if visits and on_visit is None:
        raise ValueError("visit_steps given without on_visit")

    series = ObservableSeries(n_pop=bo.n_el if bo is not None else 0)
    psi = initial.psi.copy()
    done = 0
    for m in sorted(marks | visits):
        psi = propagator.advance(psi, m - done)
        done = m
        snap = WavefunctionSnapshot(initial.grid, initial.time + m * dt, psi, initial.preset, initial.initial)
        if m in visits:
            on_visit(snap)
        if m not in marks:
            continue
        rec = observables(snap, propagator, bo)
        rec["step"] = m
        if not np.isfinite(rec["norm"]) or not np.isfinite(rec["energy"]):
            raise NumericalError(f"non-finite wavefunction at t={snap.time:.3f} au")
        if boundary_tol is not None:
            worst = max(rec["boundary"].items(), key=lambda kv: kv[1])
            if worst[1] > boundary_tol:
                raise NumericalError(
                    f"density {worst[1]:.2e} at the {worst[0]} boundary at t={snap.time_fs:.2f} fs"
                )
        series.append(rec)
        if on_store is not None:
            on_store(snap.copy(), rec)
    return series
