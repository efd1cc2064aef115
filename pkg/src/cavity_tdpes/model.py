"""Shin-Metiu molecule in a single-mode cavity (length gauge, dipole approximation).

Atomic units throughout.  The matter potential describes one electron and one
proton on a line between two fixed ions of charge +1 at ``-L/2`` and ``+L/2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy import special

from .grid import Grid3D

__all__ = [
    "ConfigError",
    "SingularityError",
    "ModelParams",
    "PotentialField",
    "PRESETS",
    "preset",
    "erf",
    "erf_over_x",
    "softened_coulomb",
    "matter_potential",
    "dipole",
    "total_potential_grid",
]

SQRT_PI = math.sqrt(math.pi)


class ConfigError(ValueError):
    """Invalid model or run configuration."""


class SingularityError(ValueError):
    """A coordinate sits on a fixed-ion singularity."""


def erf_over_x(u) -> np.ndarray:
    """``erf(u)/u`` with the removable singularity at zero filled in.

    Below ``|u| = 1e-4`` the Taylor series ``2/sqrt(pi) (1 - u^2/3)`` is used
    (next term ~1e-17 relative).
    """
    u = np.abs(np.asarray(u, dtype=float))
    out = np.empty_like(u)
    small = u < 1e-4
    us = u[small]
    out[small] = (2.0 / SQRT_PI) * (1.0 - us * us / 3.0)
    ub = u[~small]
    out[~small] = special.erf(ub) / ub
    return out


def erf(x) -> np.ndarray:
    return special.erf(np.asarray(x, dtype=float))


def softened_coulomb(x, a: float):
    """``erf(|x|/a)/|x|`` with its finite limit ``2/(a sqrt(pi))`` at the origin."""
    if a <= 0:
        raise ConfigError(f"softening length must be positive, got {a}")
    res = erf_over_x(np.abs(np.asarray(x, dtype=float)) / a) / a
    return res if res.ndim else float(res)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ModelParams:
    L: float
    a_plus: float
    a_minus: float
    a_f: float
    M: float
    omega_c: float
    lam: float
    include_self_polarization: bool = False

    def __post_init__(self):
        for name in ("L", "a_plus", "a_minus", "a_f", "M", "omega_c"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lam < 0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}")

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model parameters: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    # Suppression of proton-coupled electron transfer.
    "pcet": ModelParams(L=19.0, a_plus=3.1, a_minus=4.0, a_f=5.0, M=1836.0, omega_c=0.1, lam=0.005),
    # Cavity-induced electronic excitation.
    "elex": ModelParams(L=19.0, a_plus=4.0, a_minus=4.0, a_f=5.0, M=1836.0, omega_c=0.049, lam=0.005),
}


def preset(name: str, **overrides) -> ModelParams:
    try:
        base = PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------
def _check_nuclear(R, params: ModelParams) -> None:
    R = np.asarray(R, dtype=float)
    half = 0.5 * params.L
    if np.any(np.isclose(np.abs(R), half, rtol=0.0, atol=1e-12)):
        raise SingularityError(f"nuclear coordinate at a fixed ion (R = +-{half})")


def matter_potential(r, R, params: ModelParams):
    """Shin-Metiu potential ``V_m(r, R)``; arguments broadcast."""
    _check_nuclear(R, params)
    r = np.asarray(r, dtype=float)
    R = np.asarray(R, dtype=float)
    half = 0.5 * params.L
    v = 0.0
    for sigma, a in ((1.0, params.a_plus), (-1.0, params.a_minus)):
        v = v + 1.0 / np.abs(R + sigma * half) - softened_coulomb(r + sigma * half, a)
    v = v - softened_coulomb(R - r, params.a_f)
    return v


def dipole(r, R):
    """Molecular dipole ``R - r``.

    Unit charges on the mobile proton and both fixed ions; the fixed-ion
    contributions cancel, leaving proton minus electron position.
    """
    return np.asarray(R) - np.asarray(r)


@dataclass(frozen=True)
class PotentialField:
    """Multiplicative potential on a :class:`Grid3D` (photon kinetic term excluded)."""

    grid: Grid3D
    values: np.ndarray
    components: dict | None = None


def total_potential_grid(params: ModelParams, grid3: Grid3D, keep_components: bool = False) -> PotentialField:
    """``V_m + w^2 q^2/2 + w q lam d [+ lam^2 d^2/2]`` on the grid, ``d = R - r``.

    Without a photon axis only ``V_m`` is returned.
    """
    try:
        _check_nuclear(grid3.R.points, params)
    except SingularityError as exc:
        raise ConfigError(f"R grid unusable: {exc}") from None
    r, R, q = grid3.mesh()
    vm = matter_potential(r, R, params)  # (n_r, n_R, 1)
    comps = {"matter": vm}
    total = np.broadcast_to(vm, grid3.shape).copy()
    if grid3.has_photon:
        w = params.omega_c
        d = dipole(r, R)
        photon = 0.5 * w * w * q * q
        coupling = w * params.lam * q * d
        total += photon
        total += coupling
        comps["photon"] = photon
        comps["coupling"] = coupling
        if params.include_self_polarization:
            sp = 0.5 * (params.lam * d) ** 2
            total += sp
            comps["self_polarization"] = sp
    total.setflags(write=False)
    return PotentialField(grid3, total, comps if keep_components else None)
