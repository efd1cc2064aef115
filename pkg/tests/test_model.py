import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavity_tdpes.grid import Grid1D, Grid3D
from cavity_tdpes.model import (
    ConfigError,
    ModelParams,
    SingularityError,
    dipole,
    erf_over_x,
    matter_potential,
    preset,
    softened_coulomb,
    total_potential_grid,
)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 40.0))
def test_erf_over_x_matches_high_precision(u):
    ref = float(mpmath.erf(u) / u) if u > 0 else 2 / math.sqrt(math.pi)
    assert abs(erf_over_x(u) - ref) <= 4 * np.finfo(float).eps * max(1.0, abs(ref))


def test_softened_coulomb_limits():
    a = 3.1
    assert softened_coulomb(0.0, a) == pytest.approx(2 / (a * math.sqrt(math.pi)), rel=1e-15)
    assert softened_coulomb(60.0, a) == pytest.approx(1 / 60.0, rel=1e-14)
    with pytest.raises(ConfigError):
        softened_coulomb(1.0, 0.0)


def test_presets_hold_the_published_parameters():
    p = preset("pcet")
    assert (p.L, p.a_plus, p.a_minus, p.a_f, p.M, p.omega_c, p.lam) == (19.0, 3.1, 4.0, 5.0, 1836.0, 0.1, 0.005)
    e = preset("elex")
    assert (e.a_plus, e.omega_c) == (4.0, 0.049)
    assert not p.include_self_polarization
    with pytest.raises(ConfigError):
        preset("nope")


def test_params_validation_and_dict_round_trip():
    p = preset("pcet")
    assert ModelParams.from_dict(p.to_dict()) == p
    with pytest.raises(ConfigError):
        ModelParams.from_dict({**p.to_dict(), "typo": 1.0})
    with pytest.raises(ConfigError):
        p.with_(M=-1.0)


def test_matter_potential_by_hand():
    p = preset("pcet")
    r, R = 1.3, -2.0
    half = p.L / 2
    expect = (
        1 / abs(R + half) + 1 / abs(R - half)
        - math.erf(abs(r + half) / p.a_plus) / abs(r + half)
        - math.erf(abs(r - half) / p.a_minus) / abs(r - half)
        - math.erf(abs(R - r) / p.a_f) / abs(R - r)
    )
    assert matter_potential(r, R, p) == pytest.approx(expect, rel=1e-14)


def test_symmetric_potential_when_softenings_match():
    p = preset("elex")  # a_plus == a_minus
    r = np.linspace(-8, 8, 17)
    assert np.allclose(matter_potential(r, 2.0, p), matter_potential(-r, -2.0, p))


def test_singularity_at_fixed_ion():
    with pytest.raises(SingularityError):
        matter_potential(0.0, 9.5, preset("pcet"))


def test_total_potential_components_sum():
    p = preset("pcet").with_(include_self_polarization=True)
    g = Grid3D(Grid1D(-10, 10, 16), Grid1D(-4, 4, 9), Grid1D(-8, 8, 10))
    f = total_potential_grid(p, g, keep_components=True)
    parts = sum(np.broadcast_to(v, g.shape) for v in f.components.values())
    assert np.allclose(f.values, parts)
    r, R, q = g.mesh()
    assert np.allclose(f.components["coupling"], p.omega_c * p.lam * q * (R - r))
    assert np.allclose(f.components["self_polarization"], 0.5 * p.lam**2 * (R - r) ** 2 * np.ones_like(q))


def test_photon_free_grid_has_matter_potential_only():
    p = preset("pcet")
    g = Grid3D(Grid1D(-10, 10, 16), Grid1D(-4, 4, 9))
    f = total_potential_grid(p, g)
    r, R, _ = g.mesh()
    assert np.allclose(f.values, matter_potential(r, R, p))


def test_dipole_is_proton_minus_electron():
    assert dipole(1.0, 3.0) == 2.0


def test_singular_R_grid_is_a_config_error():
    g = Grid3D(Grid1D(-10, 10, 16), Grid1D(-9.5, 9.5, 9))
    with pytest.raises(ConfigError):
        total_potential_grid(preset("pcet"), g)
