"""Quasiclassical nuclear trajectories on extracted time-dependent surfaces.

Initial conditions are drawn from the Wigner function of the Gaussian nuclear
packet ``exp(-alpha (R - R0)^2)``, then integrated with velocity Verlet under
``R' = P / M``, ``P' = -d eps / dR`` on a force field interpolated bilinearly
in ``(R, t)`` between stored surface frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid1D, GridError, mask_segments, masked_derivative

__all__ = [
    "TrajectoryEnsemble",
    "ForceField",
    "wigner_sample",
    "force_field_from_records",
    "propagate_trajectories",
    "histogram_density",
    "silverman_bandwidth",
    "l1_distance",
]


@dataclass
class TrajectoryEnsemble:
    positions: np.ndarray  # (n_times, N)
    momenta: np.ndarray  # (n_times, N)
    times: np.ndarray  # a.u.
    seed: int | None = None
    mode: str = "full"
    energies: np.ndarray | None = None  # (n_times, N), P^2/2M + eps
    exits: int = 0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.momenta = np.atleast_2d(np.asarray(self.momenta, dtype=float))
        if self.positions.shape != self.momenta.shape:
            raise ValueError("positions and momenta differ in shape")
        if self.positions.shape[1] < 1:
            raise ValueError("ensemble needs at least one trajectory")
        if not (np.isfinite(self.positions).all() and np.isfinite(self.momenta).all()):
            raise FloatingPointError("non-finite phase-space values")
        if self.mode not in ("full", "wpol"):
            raise ValueError(f"unknown surface mode {self.mode!r}")

    @property
    def count(self) -> int:
        return self.positions.shape[1]

    def at(self, time: float) -> np.ndarray:
        """Positions at the stored time closest to ``time``."""
        k = int(np.argmin(np.abs(self.times - time)))
        return self.positions[k]


def wigner_sample(R0: float, alpha: float, N: int, seed: int, mode: str = "full") -> TrajectoryEnsemble:
    """Phase-space sample of the Wigner function of ``exp(-alpha (R - R0)^2)``.

    ``R ~ Normal(R0, 1/(4 alpha))`` and ``P ~ Normal(0, alpha)`` (variances).
    Draws are taken pairwise, so a smaller ensemble with the same seed is a
    prefix of a larger one.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if N < 1:
        raise ValueError("N must be at least 1")
    z = np.random.default_rng(seed).standard_normal((N, 2))
    R = R0 + z[:, 0] * np.sqrt(1.0 / (4.0 * alpha))
    P = z[:, 1] * np.sqrt(alpha)
    return TrajectoryEnsemble(R[None, :], P[None, :], np.zeros(1), seed, mode)


@dataclass
class ForceField:
    """Force and potential on an ``(R, t)`` mesh with off-mask extension.

    Off the validity mask the force is held at its value at the nearest mask
    edge and the potential continues linearly, consistent with that force.
    """

    R_grid: Grid1D
    times: np.ndarray  # (n_t,)
    force: np.ndarray  # (n_t, n_R)
    potential: np.ndarray  # (n_t, n_R)
    mask: np.ndarray  # (n_t, n_R)
    extension: str = "constant-force"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (np.isfinite(self.force).all() and np.isfinite(self.potential).all()):
            raise ValueError("force field must be finite on its mesh")
        if len(self.times) < 1 or self.force.shape != (len(self.times), self.R_grid.n):
            raise GridError("force field shape does not match its mesh")

    def _time_weights(self, t: float):
        ts = self.times
        if len(ts) == 1 or t <= ts[0]:
            return 0, 0, 0.0
        if t >= ts[-1]:
            return len(ts) - 1, len(ts) - 1, 0.0
        j = int(np.searchsorted(ts, t) - 1)
        return j, j + 1, (t - ts[j]) / (ts[j + 1] - ts[j])

    def _interp(self, table: np.ndarray, R: np.ndarray, t: float, slope_table: np.ndarray | None = None):
        j0, j1, s = self._time_weights(t)
        row = (1.0 - s) * table[j0] + s * table[j1]
        x = self.R_grid.points
        out = np.interp(R, x, row)
        if slope_table is not None:
            # potential beyond the mesh continues along the edge force
            f = (1.0 - s) * slope_table[j0] + s * slope_table[j1]
            lo, hi = R < x[0], R > x[-1]
            out[lo] = row[0] - f[0] * (R[lo] - x[0])
            out[hi] = row[-1] - f[-1] * (R[hi] - x[-1])
        return out

    def force_at(self, R: np.ndarray, t: float) -> np.ndarray:
        return self._interp(self.force, np.asarray(R, dtype=float), t)

    def potential_at(self, R: np.ndarray, t: float) -> np.ndarray:
        return self._interp(self.potential, np.asarray(R, dtype=float), t, slope_table=self.force)

    def outside(self, R: np.ndarray) -> np.ndarray:
        x = self.R_grid.points
        return (R < x[0]) | (R > x[-1])


def _extend_row(eps: np.ndarray, mask: np.ndarray, R_grid: Grid1D) -> tuple[np.ndarray, np.ndarray]:
    """Fill one frame: force constant beyond each mask edge, potential linear."""
    segs = mask_segments(mask)
    if not segs:
        raise ValueError("frame has an empty mask")
    x = R_grid.points
    f = -masked_derivative(eps, R_grid, mask)
    force = np.array(f)
    pot = np.array(eps, dtype=float)
    a0, _ = segs[0]
    _, b1 = segs[-1]
    force[:a0] = f[a0]
    pot[:a0] = eps[a0] - f[a0] * (x[:a0] - x[a0])
    force[b1:] = f[b1 - 1]
    pot[b1:] = eps[b1 - 1] - f[b1 - 1] * (x[b1:] - x[b1 - 1])
    for (_, b), (a, _) in zip(segs[:-1], segs[1:]):
        # nearest-edge force across interior gaps
        mid = 0.5 * (x[b - 1] + x[a])
        gap = np.arange(b, a)
        left = x[gap] <= mid
        force[gap[left]] = f[b - 1]
        force[gap[~left]] = f[a]
        pot[gap] = np.interp(x[gap], [x[b - 1], x[a]], [eps[b - 1], eps[a]])
    return force, pot


def force_field_from_records(records, mode: str = "full") -> ForceField:
    """Build a force field from a time-ordered sequence of TDPES records.

    ``mode="full"`` uses the total surface, ``mode="wpol"`` the
    weighted-polaritonic component only.
    """
    if not records:
        raise ValueError("no TDPES records")
    key = {"full": "eps_total", "wpol": "eps_wpol"}.get(mode)
    if key is None:
        raise ValueError(f"unknown surface mode {mode!r}")
    R_grid = records[0].R_grid
    times = np.array([r.time for r in records], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("records must be strictly time-ordered")
    forces, pots, masks = [], [], []
    for rec in records:
        f, p = _extend_row(getattr(rec, key), rec.mask, R_grid)
        forces.append(f)
        pots.append(p)
        masks.append(rec.mask)
    return ForceField(R_grid, times, np.array(forces), np.array(pots), np.array(masks), meta={"mode": mode})


def propagate_trajectories(
    ensemble: TrajectoryEnsemble,
    field_: ForceField,
    M: float,
    dt: float,
    t_final: float,
    store_times=None,
) -> TrajectoryEnsemble:
    """Velocity-Verlet integration of every trajectory from t=0 to ``t_final``.

    Positions and momenta are stored at ``store_times`` (default: every
    step).  Store times are rounded to the nearest step.  The number of
    trajectory-steps spent outside the R mesh is reported as ``exits``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = int(round(t_final / dt))
    if abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final={t_final} is not a multiple of dt={dt}")
    if store_times is None:
        store_steps = set(range(n_steps + 1))
    else:
        store_steps = {int(round(t / dt)) for t in store_times}
        if max(store_steps, default=0) > n_steps:
            raise ValueError("store time beyond t_final")
    R = ensemble.positions[-1].copy()
    P = ensemble.momenta[-1].copy()
    F = field_.force_at(R, 0.0)
    pos, mom, en, ts = [], [], [], []
    exits = 0

    def record(step, t):
        pos.append(R.copy())
        mom.append(P.copy())
        en.append(0.5 * P * P / M + field_.potential_at(R, t))
        ts.append(t)

    if 0 in store_steps:
        record(0, 0.0)
    for n in range(1, n_steps + 1):
        t = n * dt
        P += 0.5 * dt * F
        R += dt * P / M
        F = field_.force_at(R, t)
        P += 0.5 * dt * F
        exits += int(np.count_nonzero(field_.outside(R)))
        if n in store_steps:
            record(n, t)
    if not (np.isfinite(R).all() and np.isfinite(P).all()):
        raise FloatingPointError("trajectory integration produced non-finite values")
    return TrajectoryEnsemble(
        np.array(pos), np.array(mom), np.array(ts), ensemble.seed, ensemble.mode, np.array(en), exits
    )


def silverman_bandwidth(samples: np.ndarray) -> float:
    """``1.06 * std * N^(-1/5)``; falls back to 0.1 for a degenerate sample."""
    samples = np.asarray(samples, dtype=float)
    s = samples.std(ddof=1) if samples.size > 1 else 0.0
    if s <= 0:
        return 0.1
    return 1.06 * s * samples.size ** (-0.2)


def histogram_density(positions: np.ndarray, R_grid: Grid1D, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian-kernel density estimate on ``R_grid``, normalized to one there."""
    positions = np.asarray(positions, dtype=float).ravel()
    if positions.size == 0:
        raise ValueError("empty ensemble")
    h = silverman_bandwidth(positions) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    x = R_grid.points
    z = (x[:, None] - positions[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1)
    total = np.sum(R_grid.weights * dens)
    if total <= 0:
        raise ValueError("all trajectories lie far outside the grid")
    return dens / total


def l1_distance(a: np.ndarray, b: np.ndarray, R_grid: Grid1D) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (R_grid.n,) or b.shape != (R_grid.n,):
        raise GridError("densities do not match the grid")
    return float(np.sum(R_grid.weights * np.abs(a - b)))
