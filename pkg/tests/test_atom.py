import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sympy import Rational
from sympy.physics.wigner import clebsch_gordan as sym_cg
from sympy.physics.wigner import wigner_6j as sym_6j

from spincat.atom import (
    CONSTANTS_ENV,
    PI_POL,
    SIGMA_MINUS,
    SIGMA_PLUS,
    LaserParams,
    Polarization,
    ResonanceError,
    constants_hash,
    constants_path,
    dipole_operator,
    dls_vector,
    lightshift_matrix,
    lightshift_spectrum,
    load_constants,
    load_scheme,
    polarization_vector,
    polarization_weights,
    rabi_scale,
    scattering_strength,
    spectrum_from_dls,
)
from spincat.wigner import m_values


@pytest.fixture(scope="module")
def yb173():
    return load_scheme("173Yb")


def _laser(det, pol=SIGMA_PLUS):
    return LaserParams.from_power(0.1, 100e-6, det, pol)


class TestConstants:
    def test_schemes_present(self):
        s = load_constants()
        assert {"173Yb", "171Yb", "173Yb-spectroscopic"} <= set(s)
        assert s["173Yb"].dim == 6 and s["171Yb"].dim == 2

    def test_env_override(self, tmp_path, monkeypatch):
        src = constants_path().read_text().replace("linewidth_hz = 182e3", "linewidth_hz = 200e3", 1)
        p = tmp_path / "c.ini"
        p.write_text(src)
        monkeypatch.setenv(CONSTANTS_ENV, str(p))
        assert constants_path() == p
        assert load_scheme("173Yb").gamma == pytest.approx(2 * math.pi * 200e3)

    def test_hash_changes_with_content(self, tmp_path):
        a, b = tmp_path / "a.ini", tmp_path / "b.ini"
        a.write_text(constants_path().read_text())
        b.write_text(constants_path().read_text() + "\n")
        assert constants_hash(a) == constants_hash()
        assert constants_hash(a) != constants_hash(b)

    def test_unknown_scheme(self):
        with pytest.raises(KeyError):
            load_scheme("87Rb")

    def test_magnetic_moment_ratio(self):
        r = load_scheme("173Yb").g_factor_muB / load_scheme("171Yb").g_factor_muB
        assert r == pytest.approx(-(0.6776 / 2.5) / (0.4919 / 0.5), rel=1e-12)


class TestPolarization:
    @settings(max_examples=50, deadline=None)
    @given(phi=st.floats(-4, 4), chi=st.floats(-1, 1))
    def test_unit_norm(self, phi, chi):
        assert np.linalg.norm(polarization_vector(Polarization(phi, chi))) == pytest.approx(1.0, abs=1e-12)

    def test_pure_components(self):
        assert polarization_weights(SIGMA_PLUS)[+1] == pytest.approx(1.0)
        assert polarization_weights(SIGMA_MINUS)[-1] == pytest.approx(1.0)
        assert polarization_weights(PI_POL)[0] == pytest.approx(1.0)


class TestDipole:
    def test_against_sympy(self, yb173):
        # J=0 -> J'=1 with I=5/2: reduced factor from the 6j, projections from CG
        for Fp in (1.5, 2.5, 3.5):
            rF = Rational(int(2 * Fp), 2)
            six = float(sym_6j(1, 0, 1, Rational(5, 2), rF, Rational(5, 2)))
            red = (-1) ** int(Fp + 0 + 1 + 2.5) * math.sqrt((2 * Fp + 1) * 1) * six
            for q in (-1, 0, 1):
                D = dipole_operator(yb173, Fp, q)
                for i, mg in enumerate(m_values(2.5)):
                    for j, me in enumerate(m_values(Fp)):
                        if abs(me - mg - q) > 1e-9:
                            assert D[i, j] == 0
                            continue
                        cg = float(sym_cg(rF, 1, Rational(5, 2), Rational(int(2 * me), 2), -q,
                                          Rational(int(2 * mg), 2)))
                        assert D[i, j] == pytest.approx(red * cg, abs=1e-13)

    def test_sum_rule(self, yb173):
        # summed over branches and polarizations every ground sublevel couples equally
        tot = sum(D @ D.T for fp, _ in yb173.branches for D in (dipole_operator(yb173, fp, q) for q in (-1, 0, 1)))
        assert np.allclose(tot, tot[0, 0] * np.eye(6), atol=1e-12)
        assert tot[0, 0] == pytest.approx(1.0, abs=1e-12)


class TestLightshift:
    def test_diagonal_and_linear_in_intensity(self, yb173):
        las = _laser(11.217e9)
        M = lightshift_matrix(las, yb173)
        assert np.allclose(M, np.diag(np.diag(M)))
        s1 = lightshift_spectrum(las, yb173)
        s2 = lightshift_spectrum(las.scaled(3.0), yb173)
        assert np.allclose(s2, 3 * s1, rtol=1e-12)

    def test_sigma_mirror(self, yb173):
        sp = lightshift_spectrum(_laser(-5e9, SIGMA_PLUS), yb173)
        sm = lightshift_spectrum(_laser(-5e9, SIGMA_MINUS), yb173)
        assert np.allclose(sp, sm[::-1], rtol=1e-12)

    def test_pi_light_is_even_in_m(self, yb173):
        s = lightshift_spectrum(_laser(3e9, PI_POL), yb173)
        assert np.allclose(s, s[::-1], rtol=1e-12)

    def test_far_detuned_shift_becomes_scalar(self, yb173):
        # J = 0 ground state: once the hyperfine structure is unresolved only the
        # scalar shift survives, so DLS / shift falls off as 1/detuning
        def rel(det):
            s = lightshift_spectrum(_laser(det), yb173)
            return np.abs(dls_vector(s)).max() / abs(s.mean())

        r1, r2 = rel(5e12), rel(5e13)
        assert r1 < 1e-2
        assert r2 / r1 == pytest.approx(0.1, rel=0.05)

    def test_resonance_rejected(self, yb173):
        with pytest.raises(ResonanceError):
            lightshift_spectrum(_laser(yb173.hfs(2.5)), yb173)

    def test_sign_flips_across_resonance(self, yb173):
        h = yb173.hfs(3.5)
        below = lightshift_spectrum(_laser(h - 1e8), yb173)
        above = lightshift_spectrum(_laser(h + 1e8), yb173)
        assert below[-1] > 0 > above[-1] or below[-1] < 0 < above[-1]

    @settings(max_examples=30, deadline=None)
    @given(dls=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=9), off=st.floats(-1e6, 1e6))
    def test_dls_roundtrip(self, dls, off):
        spectrum = spectrum_from_dls(dls, off)
        assert np.allclose(dls_vector(spectrum), dls, atol=1e-6)
        assert spectrum[0] == off


class TestRates:
    def test_rabi_scale_sqrt_intensity(self, yb173):
        a = rabi_scale(_laser(1e9), yb173)
        b = rabi_scale(_laser(1e9).scaled(4), yb173)
        assert b == pytest.approx(2 * a)

    def test_scattering_falls_with_detuning(self, yb173):
        near = scattering_strength(_laser(11e9), yb173)
        far = scattering_strength(_laser(40e9), yb173)
        assert 0 < far < near

    def test_laser_validation(self):
        with pytest.raises(ValueError):
            LaserParams(-1.0, 0.0)
        with pytest.raises(ValueError):
            LaserParams(1.0, float("inf"))
        with pytest.raises(ValueError):
            LaserParams.from_power(0.1, 0.0, 0.0)
