import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special as sps

from fibercap.special import (ScaledComplex, besseli_scaled, erfi, f_aux, hyp_1122,
                              log_besseli, verify_identity_phase, verify_identity_product)


def series_i0(x, terms=80):
    return sum((x / 2) ** (2 * k) / math.factorial(k) ** 2 for k in range(terms))


class TestScaledComplex:
    def test_zero_representation(self):
        z = besseli_scaled(3, 0.0)
        assert z.mantissa == 0 and z.log_scale == 0.0
        assert z.value == 0

    def test_roundtrip_log(self):
        s = ScaledComplex.from_log(700.0 + 0.3j)
        assert s.log() == pytest.approx(700.0 + 0.3j)
        assert np.isfinite(s.mantissa)

    def test_product_stays_finite(self):
        big = besseli_scaled(0, 600.0)
        prod = big * big
        assert np.isfinite(prod.mantissa)
        assert prod.log().real == pytest.approx(2 * big.log().real)


class TestBessel:
    def test_order0_at_zero(self):
        assert besseli_scaled(0, 0.0).value == pytest.approx(1.0)

    def test_order0_at_one(self):
        assert besseli_scaled(0, 1.0).value.real == pytest.approx(series_i0(1.0), rel=1e-14)

    def test_asymptote_at_600(self):
        x = 600.0
        asym = x - 0.5 * math.log(2 * math.pi * x) + math.log1p(1 / (8 * x))
        assert abs(log_besseli(0, x).real - asym) < 1e-6

    @pytest.mark.parametrize("m", [0, 1, 2, 5, 17, 60])
    def test_real_axis_vs_scipy(self, m):
        x = np.geomspace(1e-3, 700, 200)
        ref = np.log(sps.ive(m, x)) + x
        got = log_besseli(m, x).real
        assert np.max(np.abs(got - ref) / np.maximum(1, np.abs(ref))) < 1e-12

    def test_complex_vs_scipy(self, rng):
        z = rng.uniform(-400, 400, 400) + 1j * rng.uniform(-400, 400, 400)
        m = rng.integers(0, 40, 400)
        got = log_besseli(m, z)
        ref = np.log(sps.ive(m, z)) + abs(z.real)
        assert np.max(np.abs(np.exp(got - ref) - 1)) < 1e-11

    def test_near_imaginary_axis_vs_mpmath(self):
        for z in [1e-3 + 150j, 0.5 + 60j, 2 + 400j]:
            for m in [0, 3, 20]:
                ref = complex(mpmath.besseli(m, mpmath.mpc(z.real, z.imag)))
                got = besseli_scaled(m, z).value
                assert abs(got - ref) <= 1e-11 * abs(ref)

    @pytest.mark.parametrize("x", [0.5, 7.0, 29.0, 31.0, 250.0])
    def test_recurrence(self, x):
        for m in range(1, 21):
            lo = besseli_scaled(m - 1, x).value.real
            hi = besseli_scaled(m + 1, x).value.real
            mid = besseli_scaled(m, x).value.real
            assert lo - hi == pytest.approx(2 * m / x * mid, rel=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-500, 500), st.floats(-500, 500), st.integers(0, 30))
    def test_conjugate_symmetry(self, re, im, m):
        a = besseli_scaled(m, complex(re, im))
        b = besseli_scaled(m, complex(re, -im))
        assert a.log_scale == b.log_scale
        assert a.mantissa == np.conj(b.mantissa)

    def test_crossover_both_sides(self):
        # series just inside the switch radius, recurrence just outside
        for m in [0, 4]:
            for x in [29.999999, 30.000001]:
                ref = np.log(sps.ive(m, x)) + x
                assert abs(log_besseli(m, x).real - ref) < 1e-12 * ref

    @pytest.mark.parametrize("bad", [-1, 1.5])
    def test_bad_order(self, bad):
        with pytest.raises(ValueError):
            log_besseli(bad, 1.0)

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            log_besseli(0, np.inf)


class TestErfi:
    def test_zero(self):
        assert erfi(0.0) == 0.0

    def test_small_series(self):
        x = 0.1
        series = 2 / math.sqrt(math.pi) * sum(x ** (2 * k + 1) / (math.factorial(k) * (2 * k + 1)) for k in range(20))
        assert erfi(x) == pytest.approx(series, rel=1e-14)

    def test_vs_mpmath(self):
        x = np.linspace(-6, 6, 241)
        ref = np.array([float(mpmath.erfi(v)) for v in x])
        np.testing.assert_allclose(erfi(x), ref, rtol=1e-10, atol=1e-300)

    def test_odd(self):
        x = np.linspace(0, 5, 100)
        np.testing.assert_array_equal(erfi(-x), -erfi(x))

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            erfi(np.nan)


class TestHyp:
    def test_zero(self):
        assert hyp_1122(0.0) == 1.0

    def test_slope_at_zero(self):
        h = 1e-6
        assert (hyp_1122(h) - hyp_1122(-h)) / (2 * h) == pytest.approx(1 / 3, rel=1e-8)

    def test_second_coefficient(self):
        h = 1e-3
        second = (hyp_1122(h) - 2 + hyp_1122(-h)) / (2 * h * h)
        assert second == pytest.approx(4 / 45, rel=1e-5)

    def test_vs_mpmath(self):
        for x in [1.0, -3.0, 12.0, 40.0]:
            ref = float(mpmath.hyp2f2(1, 1, 1.5, 2, x))
            assert hyp_1122(x) == pytest.approx(ref, rel=1e-13)

    def test_monotone_on_unit_interval(self):
        v = hyp_1122(np.linspace(0, 1, 100))
        assert np.all(np.diff(v) > 0)

    def test_guard(self):
        with pytest.raises(ValueError):
            hyp_1122(51.0)


class TestFaux:
    def test_zeros(self):
        assert f_aux(0.0, 0.7) == 0.0
        assert f_aux(0.3, 0.0) == 0.0

    def test_against_series(self):
        alpha = (3 + math.sqrt(3)) / 6
        a = alpha**2 * 0.01
        erfi_part = 0.5 * math.pi * 2 / math.sqrt(math.pi) * sum(
            math.sqrt(a) ** (2 * k + 1) / (math.factorial(k) * (2 * k + 1)) for k in range(30))
        hyp_part = a * float(mpmath.hyp2f2(1, 1, 1.5, 2, a))
        assert f_aux(0.01, alpha) == pytest.approx(erfi_part - hyp_part, rel=1e-13)

    @pytest.mark.parametrize("q2", [(3 + math.sqrt(3)) / 6, (3 - math.sqrt(3)) / 6, 1.0])
    @pytest.mark.parametrize("ratio", [0.01, 0.2, 1.5])
    def test_halfgaussian_log_moment(self, q2, ratio):
        # E[log(1 + q2 N / R0^2)] / 2 for a half-Gaussian R0 with E R0^2 = 1
        n = ratio * 2

        def integrand(r):
            return 0.5 * math.log1p(q2 * n / (r * r)) * math.sqrt(2 / math.pi) * math.exp(-r * r / 2)

        val = integrate.quad(integrand, 0, 1, limit=200)[0] + integrate.quad(integrand, 1, np.inf, limit=200)[0]
        assert f_aux(ratio, math.sqrt(q2)) == pytest.approx(val, rel=1e-9)


class TestIdentities:
    def test_phase_trivial(self):
        lhs, rhs = verify_identity_phase(0, 0.0, 0.0)
        assert lhs == pytest.approx(1) and rhs == pytest.approx(1)

    def test_phase_example(self):
        lhs, rhs = verify_identity_phase(1, 2.0, 0.3)
        assert abs(lhs - rhs) < 1e-10

    def test_phase_order2_zero_argument(self):
        lhs, rhs = verify_identity_phase(2, 0.0, 1.1)
        assert abs(lhs) < 1e-15 and abs(rhs) < 1e-15

    def test_product_trivial(self):
        lhs, rhs = verify_identity_product(0, 1.0, 0.0, 0.0)
        assert lhs == pytest.approx(0.5) and rhs == pytest.approx(0.5)

    def test_product_example(self):
        lhs, rhs = verify_identity_product(1, 2.0, 1.0, 1.0)
        assert abs(lhs - rhs) / abs(rhs) < 1e-8

    def test_product_zero_argument(self):
        assert verify_identity_product(2, 1.3, 0.7, 0.0) == (0.0, 0.0)

    def test_product_invalid(self):
        with pytest.raises(ValueError):
            verify_identity_product(0, 0.0, 1.0, 1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10), st.floats(0.0, 50.0), st.floats(-math.pi, math.pi))
    def test_phase_random(self, m, x, theta0):
        lhs, rhs = verify_identity_phase(m, x, theta0)
        assert abs(lhs - rhs) <= 1e-8 * max(abs(rhs), 1e-300) or abs(lhs - rhs) < 1e-14

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10), st.floats(0.05, 5.0), st.floats(-4.0, 4.0), st.floats(-4.0, 4.0))
    def test_product_random(self, m, a, b, c):
        lhs, rhs = verify_identity_product(m, a, b, c)
        assert abs(lhs - rhs) <= 1e-8 * abs(rhs) or abs(lhs - rhs) < 1e-300
