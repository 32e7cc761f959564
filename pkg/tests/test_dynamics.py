import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from spincat.atom import SIGMA_PLUS, LaserParams, dls_vector, lightshift_spectrum, load_scheme
from spincat.dynamics import (
    FieldConfig,
    Geometry,
    LindbladPropagator,
    cat_state,
    dephasing_collapse,
    evolve,
    ground_state,
    magnetization,
    populations,
    raman_unitary,
    rotated_hamiltonian,
    scattering_collapse,
    state_fidelity,
    stretched_state,
    trajectory,
    validate_density_matrix,
    write_trajectory_csv,
)
from spincat.wigner import spin_operators


def _random_problem(seed, n=4, ncol=2):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    H = A + A.conj().T
    Cs = [0.3 * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) for _ in range(ncol)]
    psi = rng.normal(size=n) + 1j * rng.normal(size=n)
    psi /= np.linalg.norm(psi)
    return H, Cs, np.outer(psi, psi.conj())


class TestStates:
    def test_ground_and_stretched(self):
        assert ground_state(6)[0, 0] == 1
        assert stretched_state(6, upper=True)[-1] == 1

    def test_cat_normalized(self):
        v = cat_state(6, level=1)
        assert np.linalg.norm(v) == pytest.approx(1.0)
        assert v[1] != 0 and v[4] != 0

    def test_validation(self):
        validate_density_matrix(ground_state(3))
        with pytest.raises(ValueError):
            validate_density_matrix(np.diag([1.2, -0.2]))
        with pytest.raises(ValueError):
            validate_density_matrix(np.array([[0.5, 1], [0, 0.5]]))


class TestLindblad:
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31), t=st.floats(0.01, 3.0))
    def test_trace_and_positivity(self, seed, t):
        H, Cs, rho0 = _random_problem(seed)
        rho = evolve(rho0, H, Cs, t)
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-10)
        assert np.abs(rho - rho.conj().T).max() < 1e-10
        assert np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() > -1e-10

    @pytest.mark.parametrize("seed", range(5))
    def test_expm_matches_ode(self, seed):
        H, Cs, rho0 = _random_problem(seed)
        a = evolve(rho0, H, Cs, 2.0, method="expm")
        b = evolve(rho0, H, Cs, 2.0, method="ode", tol=1e-11)
        assert np.abs(a - b).max() < 1e-8

    def test_propagator_matches_evolve(self):
        H, Cs, rho0 = _random_problem(7)
        ts = np.linspace(0, 2, 5)
        states = LindbladPropagator(H, Cs).apply(rho0, ts)
        for t, s in zip(ts, states):
            assert np.abs(s - evolve(rho0, H, Cs, t)).max() < 1e-10

    def test_closed_system_is_unitary(self):
        H, _, rho0 = _random_problem(3)
        U = sla.expm(-1j * 1.3 * H)
        assert np.abs(evolve(rho0, H, (), 1.3) - U @ rho0 @ U.conj().T).max() < 1e-12

    def test_bad_arguments(self):
        H, Cs, rho0 = _random_problem(1)
        with pytest.raises(ValueError):
            evolve(rho0, H, Cs, -1.0)
        with pytest.raises(ValueError):
            evolve(rho0, H, Cs, 1.0, method="rk4")


class TestRaman:
    @pytest.mark.parametrize("beta", [0.0, 0.4, math.pi / 2])
    def test_unitary_matches_rotated_hamiltonian(self, beta):
        spectrum = 2 * math.pi * np.array([0.0, 1.3, 2.9, 4.1, 7.0, 8.2]) * 1e3
        H = rotated_hamiltonian(spectrum, beta=beta)
        t = 1.7e-4
        assert np.abs(raman_unitary(spectrum, beta, t) - sla.expm(-1j * t * H)).max() < 1e-11

    def test_linear_spectrum_is_covariant_rotation(self):
        # a lightshift linear in m is a rotation about the beam axis
        f = 2 * math.pi * 1e3
        spectrum = f * np.arange(6)
        t = 0.25 / 1e3
        jx, _, _ = spin_operators(2.5)
        U = raman_unitary(spectrum, math.pi / 2, t)
        ref = sla.expm(-1j * f * t * jx)
        phase = U[0, 0] / ref[0, 0]
        assert abs(abs(phase) - 1) < 1e-12
        assert np.abs(U - phase * ref).max() < 1e-11

    def test_covariant_rotation_has_single_frequency(self):
        f = 2e3
        spectrum = 2 * math.pi * f * np.arange(6)
        H = rotated_hamiltonian(spectrum)
        ts = np.linspace(0, 2e-3, 400, endpoint=False)
        mz = magnetization(trajectory(ground_state(6), H, (), ts))
        assert mz == pytest.approx(-2.5 * np.cos(2 * math.pi * f * ts), abs=1e-9)

    def test_cat_pulse_spectrum_has_several_beats(self):
        sch = load_scheme("173Yb")
        spectrum = lightshift_spectrum(LaserParams.from_power(0.1, 100e-6, -5.005e9, SIGMA_PLUS), sch)
        beats = np.abs(dls_vector(spectrum)) / (2 * math.pi)
        dt = 1 / (40 * beats.max())
        ts = np.arange(4096) * dt
        mz = magnetization(trajectory(ground_state(6), rotated_hamiltonian(spectrum), (), ts))
        power = np.abs(np.fft.rfft(mz - mz.mean()))
        freqs = np.fft.rfftfreq(len(ts), dt)
        top = freqs[np.argsort(power)[-15:]]
        for b in beats:
            assert np.min(np.abs(top - b)) < 2 / (len(ts) * dt)


class TestGeometry:
    def test_parallel_field_commutes(self):
        sch = load_scheme("173Yb")
        spectrum = np.linspace(0, 1e4, 6)
        H = rotated_hamiltonian(spectrum, FieldConfig(1e-3, Geometry.PARALLEL), sch)
        assert np.allclose(H, np.diag(np.diag(H)))

    def test_orthogonal_field_requires_scheme(self):
        with pytest.raises(ValueError):
            rotated_hamiltonian(np.zeros(6), FieldConfig(1e-3))
        with pytest.raises(ValueError):
            FieldConfig(-1.0)


class TestNoiseOperators:
    def test_dephasing_keeps_populations(self):
        C = dephasing_collapse(0.251, 2.5)
        rho0 = np.outer(cat_state(6), cat_state(6).conj())
        rho = evolve(rho0, np.zeros((6, 6)), C, 0.05)
        assert np.allclose(populations(rho), populations(rho0))

    @pytest.mark.parametrize("level", [0, 1, 2])
    def test_dephasing_coherence_decay(self, level):
        # |C_kk - C_(n-1-k)(n-1-k)|^2 / 2 = 2 (F - k) / coefficient
        coef, t = 0.251, 0.03
        v = cat_state(6, level=level)
        rho = evolve(np.outer(v, v.conj()), np.zeros((6, 6)), dephasing_collapse(coef, 2.5), t)
        rate = 2 * (2.5 - level) / coef
        assert abs(rho[level, 5 - level]) == pytest.approx(0.5 * math.exp(-rate * t), rel=1e-10)

    def test_dephasing_infinite_is_zero(self):
        assert not dephasing_collapse(math.inf, 2.5)[0].any()
        with pytest.raises(ValueError):
            dephasing_collapse(0.0, 2.5)

    def test_scattering_vanishes_without_light(self):
        sch = load_scheme("173Yb")
        Cs = scattering_collapse(LaserParams(0.0, 5e9), sch)
        assert all(not C.any() for C in Cs)

    def test_scattering_rate_falls_with_detuning(self):
        sch = load_scheme("173Yb")

        def rate(det):
            Cs = scattering_collapse(LaserParams.from_power(0.1, 100e-6, det, SIGMA_PLUS), sch)
            return sum(np.trace(C.conj().T @ C).real for C in Cs)

        assert rate(40e9) < rate(11e9) < rate(-5e9)


class TestFidelityAndIO:
    def test_fidelity_pure_states(self):
        a = np.outer(cat_state(6), cat_state(6).conj())
        b = np.outer(cat_state(6, phase=-1j), cat_state(6, phase=-1j).conj())
        assert state_fidelity(a, a) == pytest.approx(1.0)
        assert state_fidelity(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_fidelity_rejects_negative(self):
        with pytest.raises(ValueError):
            state_fidelity(np.diag([1.5, -0.5]), np.eye(2) / 2)

    def test_csv(self, tmp_path):
        ts = np.array([0.0, 1e-4])
        states = np.array([ground_state(6), ground_state(6, 5)])
        p = tmp_path / "t.csv"
        write_trajectory_csv(p, ts, states)
        lines = p.read_text().splitlines()
        assert lines[0].startswith("time_s,") and lines[0].endswith("magnetization")
        assert len(lines) == 3
        assert float(lines[2].split(",")[-1]) == pytest.approx(2.5)
