import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import synthetic_infidelities
from spincat.atom import LaserParams, dls_vector, lightshift_spectrum, load_scheme, spectrum_from_dls
from spincat.dynamics import raman_unitary
from spincat.gatedesign import (
    DLSCondition,
    GateEvaluator,
    GateTarget,
    check_cat_condition,
    check_condition,
    check_x_condition,
    exact_detuning,
    fundamental_frequencies,
    gate_infidelity,
    gate_time,
    ideal_gate,
    intensity_for_gate_time,
    scan_detuning,
    sigma_h,
    sigma_x,
    unitary_infidelity,
    write_scan_csv,
    write_scan_rows_csv,
)

X, CAT = GateTarget.X_PI, GateTarget.CAT_HALF_PI


@pytest.fixture(scope="module")
def yb173():
    return load_scheme("173Yb")


def _laser(det):
    return LaserParams.from_power(0.1, 100e-6, det)


def _dls(det, scheme):
    return dls_vector(lightshift_spectrum(_laser(det), scheme))


class TestPatterns:
    def test_x_odd(self):
        c = DLSCondition(X, (0, 1, -1, 2, 0))
        assert list(c.odd) == [1, 3, -1, 5, 1]
        assert c.gate_sign == 0

    def test_cat_signs(self):
        minus = DLSCondition(CAT, (2, 2, 3, 3, 4), "minus")
        plus = DLSCondition(CAT, (2, 2, 3, 3, 4), "plus")
        assert minus.ratio == (7, 9, 11, 13, 15) and minus.gate_sign == 1
        assert plus.ratio == (9, 7, 13, 11, 17) and plus.gate_sign == -1

    def test_x_tie_break_prefers_small_n(self):
        c = check_x_condition([2.0, 2.0, 2.0, 2.0, 2.0])
        assert c.n == (0, 0, 0, 0, 0)
        assert check_x_condition([1.0, 3.0, 5.0, 1.0, -1.0]).n == (0, 1, 2, 0, -1)

    def test_negative_scale(self):
        c = check_x_condition([-1.0] * 5)
        assert list(c.odd) == [-1] * 5
        assert gate_time(X, [-1.0] * 5, c) == pytest.approx(math.pi)

    def test_cat_recovered(self):
        c = check_cat_condition(np.array([7, 9, 11, 13, 15]) * 3.0)
        assert c.ratio == (7, 9, 11, 13, 15) and c.sign == "minus"
        assert check_cat_condition(np.array([1, 1, 1, 1, 1.0])) is None
        assert check_x_condition(np.array([1, 2, 3.0])) is None

    def test_sigma_formula(self):
        # one entry off by 0.1 in units of the scale, five DLSs
        dls = np.array([1.0, 1.0, 1.1, 1.0, 1.0])
        c = DLSCondition(X, (0,) * 5)
        assert sigma_x(dls, c) == pytest.approx(math.sqrt(0.01 / 5))
        with pytest.raises(ValueError):
            sigma_h(dls, c)

    def test_tolerance_boundary(self):
        assert check_x_condition([1.0, 1.0, 1.04, 1.0, 1.0]) is not None
        assert check_x_condition([1.0, 1.0, 1.05, 1.0, 1.0]) is None

    def test_degenerate_inputs(self):
        assert check_x_condition([]) is None
        assert check_x_condition([0.0, 1.0]) is None
        assert check_x_condition([1.0, float("nan")]) is None
        with pytest.raises(ValueError):
            check_x_condition([1.0], tol=0)

    @settings(max_examples=60, deadline=None)
    @given(n=st.lists(st.integers(-3, 3), min_size=5, max_size=5), s=st.floats(0.1, 1e5))
    def test_exact_pattern_found(self, n, s):
        odd = 2 * np.array(n) + 1
        c = check_x_condition(s * odd)
        assert c is not None
        assert sigma_x(s * odd, c) < 1e-9


class TestSufficiency:
    @pytest.mark.parametrize("target,sign", [(X, None), (CAT, "plus"), (CAT, "minus")])
    def test_small_grid_through_library(self, target, sign):
        grid, odd, ref = synthetic_infidelities(target, sign, n_abs=1)
        for n, o in zip(grid[::7], odd[::7]):
            cond = DLSCondition(target, tuple(int(v) for v in n), sign)
            assert np.array_equal(cond.odd, o)
            dls = 2 * math.pi * 500.0 * o
            t = gate_time(target, dls, cond)
            U = raman_unitary(spectrum_from_dls(dls), math.pi / 2, t)
            assert unitary_infidelity(U, ideal_gate(target, 6, cond.gate_sign or 1)) < 1e-9
        assert ref.max() < 1e-9

    def test_wrong_sign_fails(self):
        dls = 2 * math.pi * 500.0 * np.array([7, 9, 11, 13, 15])
        cond = check_cat_condition(dls)
        U = raman_unitary(spectrum_from_dls(dls), math.pi / 2, gate_time(CAT, dls, cond))
        assert unitary_infidelity(U, ideal_gate(CAT, 6, -cond.gate_sign)) > 0.4


class TestPhysicalConditions:
    def test_x_at_11217(self, yb173):
        dls = _dls(11.217e9, yb173)
        c = check_x_condition(dls)
        assert c.ratio == (1, 1, 1, 1, 1)
        assert sigma_x(dls, c) < 0.01
        assert sigma_x(dls, c) == pytest.approx(2.6454e-4, rel=1e-3)

    def test_cat_at_minus_5005(self, yb173):
        dls = _dls(-5.005e9, yb173)
        c = check_cat_condition(dls)
        assert c.ratio == (7, 9, 11, 13, 15)
        assert sigma_h(dls, c) == pytest.approx(5.1375e-3, rel=1e-3)

    def test_mean_fundamental_frequency(self, yb173):
        # cat pulse calibrated to 85.1 us
        las = intensity_for_gate_time(CAT, _laser(-5.005e9), yb173, 85.1e-6)
        dls = dls_vector(lightshift_spectrum(las, yb173))
        f = fundamental_frequencies(dls, check_cat_condition(dls))
        assert f.mean() == pytest.approx(2.939e3, rel=0.01)

    def test_gate_times_at_100mW(self, yb173):
        for det, target, ref in ((11.217e9, X, 0.02697e-3), (-5.005e9, CAT, 0.134e-3)):
            dls = _dls(det, yb173)
            t = gate_time(target, dls, check_condition(target, dls))
            assert t == pytest.approx(ref, rel=0.2)
        assert gate_time(X, _dls(11.217e9, yb173), check_x_condition(_dls(11.217e9, yb173))) == \
            pytest.approx(2.69146e-5, rel=1e-4)

    def test_exact_detunings_frozen(self, yb173):
        assert exact_detuning(X, yb173, 11.217e9) == pytest.approx(11211138868.40, abs=2e3)
        assert exact_detuning(CAT, yb173, -5.005e9) == pytest.approx(-4987203108.12, abs=2e3)

    def test_exact_detuning_is_intensity_free(self, yb173):
        det = exact_detuning(X, yb173, 11.217e9)
        a = dls_vector(lightshift_spectrum(LaserParams(1.0, det), yb173))
        b = dls_vector(lightshift_spectrum(LaserParams(7.0, det), yb173))
        assert np.allclose(a / a[0], b / b[0], rtol=1e-12)
        assert sigma_x(a, check_x_condition(a)) < 1e-6

    def test_intensity_rescaling(self, yb173):
        las = intensity_for_gate_time(X, _laser(11.217e9), yb173, 1e-4)
        dls = dls_vector(lightshift_spectrum(las, yb173))
        assert gate_time(X, dls, check_x_condition(dls)) == pytest.approx(1e-4, rel=1e-12)


class TestEvaluator:
    def test_matches_direct_evolution(self, yb173):
        las = _laser(-5.005e9)
        ev = GateEvaluator(CAT, las, yb173)
        for t in (3e-5, 1.35e-4):
            assert ev.infidelity(t) == pytest.approx(gate_infidelity(CAT, las, yb173, t), abs=1e-9)

    def test_unitary_mode_at_exact_detuning(self, yb173):
        det = exact_detuning(X, yb173, 11.217e9)
        ev = GateEvaluator(X, _laser(det), yb173, noise="unitary")
        t, f, cond = ev.optimize_time()
        assert cond.ratio == (1, 1, 1, 1, 1)
        assert f < 1e-9

    def test_scattering_adds_error(self, yb173):
        las = _laser(11.217e9)
        t = 2.69e-5
        assert gate_infidelity(X, las, yb173, t, noise="scattering") > gate_infidelity(X, las, yb173, t, noise="unitary")
        with pytest.raises(ValueError):
            gate_infidelity(X, las, yb173, t, noise="bogus")


class TestScan:
    def test_narrow_scan_finds_x_minimum(self, yb173, tmp_path):
        res = scan_detuning(X, (11.1e9, 11.3e9), 20e6, _laser(0.0), yb173)
        best = min(res.minima, key=lambda r: r.infidelity)
        assert best.detuning == pytest.approx(11.217e9, rel=0.01)
        assert best.infidelity < 1e-4
        assert res.interval_of(best.detuning) is not None
        write_scan_csv(tmp_path / "a.csv", res)
        write_scan_rows_csv(tmp_path / "b.csv", res)
        head = (tmp_path / "a.csv").read_text().splitlines()
        assert head[0] == "index,detuning_GHz,range_GHz,infidelity,gate_time_ms,ratio"
        assert len(head) >= 2
        assert len((tmp_path / "b.csv").read_text().splitlines()) == len(res.rows) + 1

    def test_empty_range(self, yb173):
        res = scan_detuning(X, (1e9, 0.0), 1e7, _laser(0.0), yb173)
        assert res.rows == [] and res.minima == []

    def test_resonances_skipped(self, yb173):
        h = yb173.hfs(2.5)
        res = scan_detuning(X, (h - 1e7, h + 1e7), 1e7, _laser(0.0), yb173, guard=2e7)
        assert res.rows == []
