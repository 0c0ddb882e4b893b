import math

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.distance import cdist

from fibercap.channel import FiberParams, amplitude_pdf
from fibercap.samplers import (CHUNK, KLNoise, SimConfig, algebraic_covariance, algebraic_sample,
                               exact_path_sample, fokker_planck_amplitude, split_step_sample)


def energy_distance_pvalue(x, y, n_perm=200, seed=0):
    """Permutation p-value of the two-sample energy statistic for points in the plane."""
    z = np.concatenate([x, y])
    pts = np.column_stack([z.real, z.imag])
    d = cdist(pts, pts)
    n = x.size

    def stat(idx):
        a, b = idx[:n], idx[n:]
        return 2 * d[np.ix_(a, b)].mean() - d[np.ix_(a, a)].mean() - d[np.ix_(b, b)].mean()

    rng = np.random.default_rng(seed)
    base = stat(np.arange(z.size))
    perms = [stat(rng.permutation(z.size)) for _ in range(n_perm)]
    return (1 + sum(s >= base for s in perms)) / (n_perm + 1)


class TestSplitStep:
    def test_noiseless_matches_recursion(self):
        p = FiberParams(1.27, 0.0, 5000.0)
        q0 = 0.01 + 0.005j
        n = 500
        out = split_step_sample(q0, p, SimConfig(n, 0, 3))
        eps = p.length / n
        ref = q0
        for _ in range(n):
            ref = ref + 1j * eps * p.gamma * abs(ref) ** 2 * ref
        np.testing.assert_allclose(out, ref, rtol=1e-12)

    def test_noiseless_converges_to_rotation(self):
        p = FiberParams(1.27, 0.0, 5000.0)
        q0 = 0.02
        exact = q0 * np.exp(1j * p.gamma * q0**2 * p.length)
        errs = [abs(split_step_sample(q0, p, SimConfig(n, 0, 1))[0] - exact) for n in (1000, 4000)]
        assert errs[1] < errs[0] / 3

    def test_exponential_scheme_exact_without_noise(self):
        p = FiberParams(1.27, 0.0, 5000.0)
        q0 = 0.02
        out = split_step_sample(q0, p, SimConfig(50, 0, 1), scheme="exponential")[0]
        assert out == pytest.approx(q0 * np.exp(1j * p.gamma * q0**2 * p.length), rel=1e-12)

    def test_linear_moments(self, linear_params):
        q0 = 0.01 - 0.02j
        n = 40000
        out = split_step_sample(q0, linear_params, SimConfig(20, 3, n))
        var = linear_params.noise_power
        se = math.sqrt(var / 2 / n)
        assert abs(out.real.mean() - q0.real) < 3 * se
        assert abs(out.imag.mean() - q0.imag) < 3 * se
        assert abs(np.var(out) - var) < 3 * var * math.sqrt(2 / n) * 1.5

    def test_deterministic(self, params):
        cfg = SimConfig(50, 11, CHUNK + 100)
        a = split_step_sample(0.02, params, cfg)
        b = split_step_sample(0.02, params, cfg)
        np.testing.assert_array_equal(a, b)
        c = split_step_sample(0.02, params, SimConfig(50, 12, CHUNK + 100))
        assert not np.array_equal(a, c)

    def test_divergence_reported(self):
        p = FiberParams(1e6, 1e-9, 10.0)
        with pytest.warns(RuntimeWarning):
            with pytest.raises(FloatingPointError, match="step"):
                split_step_sample(10.0, p, SimConfig(5, 0, 4))

    def test_bad_scheme(self, params):
        with pytest.raises(ValueError):
            split_step_sample(0.01, params, SimConfig(5, 0, 4), scheme="rk4")

    def test_bad_config(self):
        with pytest.raises(ValueError):
            SimConfig(0, 0, 10)


class TestExactPath:
    def test_noiseless_exact(self):
        p = FiberParams(1.27, 0.0, 5000.0)
        q0 = 0.03 + 0.01j
        out = exact_path_sample(q0, p, SimConfig(7, 0, 2))
        np.testing.assert_allclose(out, q0 * np.exp(1j * p.gamma * abs(q0) ** 2 * p.length), rtol=1e-14)

    def test_linear(self, linear_params):
        a = exact_path_sample(0.01, linear_params, SimConfig(10, 5, 20000))
        var = linear_params.noise_power
        assert abs(a.mean() - 0.01) < 4 * math.sqrt(var / 20000)

    def test_matches_split_step(self, params):
        q0 = math.sqrt(5e-4)
        a = split_step_sample(q0, params, SimConfig(1000, 1, 1500))
        b = exact_path_sample(q0, params, SimConfig(1000, 2, 1500))
        assert energy_distance_pvalue(a, b) > 0.01

    def test_gamma_invariant_amplitude(self, params, linear_params):
        a = np.abs(exact_path_sample(0.02, params, SimConfig(200, 1, 20000)))
        b = np.abs(exact_path_sample(0.02, linear_params, SimConfig(200, 2, 20000)))
        assert stats.ks_2samp(a, b).pvalue > 0.01


class TestAlgebraic:
    def test_kl_variance(self):
        kl = KLNoise(512)
        assert 0 < kl.truncation_error() < 4 / (math.pi**2 * 512) * 1.01
        z = np.linspace(0, 1, 50)
        var = 2 * (kl.sigma**2 * kl.psi(z, 1.0) ** 2).sum(-1) / 2
        # var of a standard Brownian motion at z is z
        np.testing.assert_allclose(var, z, atol=2e-3)

    def test_bad_terms(self):
        with pytest.raises(ValueError):
            KLNoise(0)

    def test_mean_intensity(self, params):
        r0 = 0.02
        n = 100000
        s = algebraic_sample(r0, 0.0, params, kl=KLNoise(256), seed=3, batch=n)
        var = params.noise_power
        se = math.sqrt((2 * r0 * r0 * var + var * var) / n)
        assert abs(s.r_sq.mean() - (r0 * r0 + var)) < 3 * se + var * 4 / (math.pi**2 * 256)

    def test_no_nonlinearity(self, linear_params):
        s = algebraic_sample(0.02, 1.1, linear_params, seed=0, batch=100)
        np.testing.assert_allclose(s.phi, 1.1)

    def test_correlation(self, params):
        # E[Z1 conj(Z2)] = (sqrt 3 / 2) N
        from fibercap.samplers import _kl_functionals
        kl = KLNoise(512)
        x = kl.draw(np.random.default_rng(0), 200000, params.noise_power)
        z1, z2, _ = _kl_functionals(x, kl.sigma)
        n = params.noise_power
        assert np.mean(z1 * np.conj(z2)).real == pytest.approx(math.sqrt(3) / 2 * n, rel=0.02)
        assert np.mean(np.abs(z1) ** 2) == pytest.approx(n, rel=0.02)
        assert np.mean(np.abs(z2) ** 2) == pytest.approx(n, rel=0.02)

    def test_covariance(self):
        # high nonlinearity, well inside the algebraic model
        p = FiberParams(1.27, 1e-9, 5000.0)
        r0 = 0.05
        s = algebraic_sample(r0, 0.0, p, kl=KLNoise(256), seed=1, batch=200000, wrap=False)
        gl = p.gamma * p.length
        emp = np.cov(np.vstack([s.r_sq, s.phi / gl]))
        ref = algebraic_covariance(r0, p)
        np.testing.assert_allclose(emp, ref, rtol=0.05)

    def test_to_complex(self, params):
        s = algebraic_sample(0.02, 0.0, params, batch=10)
        q = s.to_complex()
        np.testing.assert_allclose(np.abs(q) ** 2, s.r_sq)

    def test_agrees_with_exact_path(self):
        # validity regime: r0^2 >> N so the linear phase is negligible
        p = FiberParams(1.27, 1e-10, 5000.0)
        r0 = 0.03
        a = algebraic_sample(r0, 0.0, p, seed=4, batch=1500, linear_phase=True).to_complex()
        b = exact_path_sample(r0, p, SimConfig(2000, 5, 1500))
        assert energy_distance_pvalue(a, b) > 0.01


class TestFokkerPlanck:
    @pytest.mark.parametrize("r0", [0.0, 0.0224])
    def test_vs_closed_form(self, params, r0):
        fp = fokker_planck_amplitude(r0, params)
        ref = amplitude_pdf(fp.r, r0, params)
        assert np.max(np.abs(fp.density - ref)) < 0.01 * ref.max()

    def test_mass_conserved(self, params):
        fp = fokker_planck_amplitude(0.01, params, n_z=100)
        np.testing.assert_allclose(fp.mass, 1.0, atol=1e-6)

    def test_scaling_overlay(self, params):
        lam = 2.0
        base = fokker_planck_amplitude(0.01, params, n_r=800, n_z=100)
        scaled = fokker_planck_amplitude(lam * 0.01, params.scaled(lam), n_r=800, n_z=100)
        np.testing.assert_allclose(scaled.r, lam * base.r, rtol=1e-12)
        np.testing.assert_allclose(scaled.density * lam, base.density, atol=1e-9 * base.density.max())

    def test_short_domain(self, params):
        with pytest.raises(ValueError):
            fokker_planck_amplitude(0.01, params, r_max=0.012)
