import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from fibercap import dmc
from fibercap.channel import FiberParams
from fibercap.samplers import SimConfig, exact_path_sample


def small_grid(params, n_rings=12, n_phases=16, power=5e-4):
    return dmc.build_grid(n_rings, n_phases, math.sqrt(power) + 5 * math.sqrt(params.noise_power))


class TestGrid:
    def test_single_symbol(self):
        g = dmc.build_grid(1, 1, 2.0)
        assert g.radii.tolist() == [2.0]
        assert g.n_outputs == 3

    def test_uniform_radii(self):
        g = dmc.build_grid(4, 8, 1.0)
        np.testing.assert_allclose(g.radii, [0.25, 0.5, 0.75, 1.0])
        np.testing.assert_allclose(g.edges, [0.125, 0.375, 0.625, 0.875, 1.125])

    def test_sqrt_uniform_equal_power_steps(self):
        g = dmc.build_grid(5, 4, 2.0, spacing="sqrt-uniform")
        np.testing.assert_allclose(np.diff(g.radii**2), 0.8)

    @pytest.mark.parametrize("args", [(0, 4, 1.0), (3, 0, 1.0), (3, 4, 0.0), (3, 4, 1.0, "log")])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            dmc.build_grid(*args)

    def test_covers_output_mass(self, params, desk):
        # Rician tail beyond the last edge for the outermost input
        P = desk.power
        g = dmc.build_grid(50, 64, 5 * math.sqrt(params.noise_power + P))
        n = params.noise_power
        tail = stats.ncx2.sf(2 * g.edges[-1] ** 2 / n, 2, 2 * P / n)
        assert tail < 1e-6

    def test_bin_of_layout(self):
        g = dmc.build_grid(3, 4, 3.0)
        q = np.array([0.1, 1.0, 1.0j, 2.0 * np.exp(-0.1j), 10.0])
        np.testing.assert_array_equal(g.bin_of(q), [0, 1, 2, 5, 13])

    def test_orbits(self):
        g = dmc.build_grid(2, 3, 1.0)
        assert g.orbits().tolist() == [0, 1, 1, 1, 2, 2, 2, 3]


class TestClosedForm:
    def test_rows_sum_to_one(self, params):
        t = dmc.transition_closed_form(small_grid(params), params)
        np.testing.assert_allclose(t.probs.sum(1), 1, atol=1e-12)
        assert t.deficit < 1e-3
        assert np.all(t.probs >= 0)

    def test_linear_matches_gaussian_bins(self, linear_params):
        p = linear_params
        g = dmc.build_grid(4, 4, 2.5 * math.sqrt(p.noise_power))
        r0 = g.radii[1]
        row = dmc.channel_rows(g, p, [r0], 0.0)[0][0]
        var = p.noise_power

        def dens(phi, r):
            d2 = r * r + r0 * r0 - 2 * r * r0 * math.cos(phi)
            return r * math.exp(-d2 / var) / (math.pi * var)

        for ring in range(g.n_rings):
            for sector in range(g.n_phases):
                c = sector * g.dphi
                ref, _ = integrate.dblquad(dens, g.edges[ring], g.edges[ring + 1],
                                           c - g.dphi / 2, c + g.dphi / 2, epsabs=1e-11)
                assert row[g.output_index(ring, sector)] == pytest.approx(ref, abs=2e-6)

    def test_uniform_phase_marginal(self, params):
        g = small_grid(params)
        t = dmc.transition_closed_form(g, params)
        # averaging a row over all input rotations flattens each annulus
        row = t.probs[5]
        avg = np.mean([dmc.rotate_row(row, g, k) for k in range(g.n_phases)], axis=0)
        rings = avg[1:-1].reshape(g.n_rings, g.n_phases)
        np.testing.assert_allclose(rings, np.broadcast_to(rings.mean(1, keepdims=True), rings.shape), rtol=1e-12)

    def test_rotation_equivariance(self, params):
        g = small_grid(params)
        r0 = g.radii[4]
        base = dmc.channel_rows(g, params, [r0], 0.0)[0][0]
        rot = dmc.channel_rows(g, params, [r0], 3 * g.dphi)[0][0]
        np.testing.assert_allclose(dmc.rotate_row(base, g, 3), rot, atol=1e-12)

    def test_monte_carlo(self, params, desk):
        g = small_grid(params)
        r0 = math.sqrt(desk.power)
        row = dmc.channel_rows(g, params, [r0])[0][0]
        n = 40000
        q = exact_path_sample(r0, params, SimConfig(400, 3, n))
        emp = np.bincount(g.bin_of(q), minlength=g.n_outputs) / n
        null = 0.5 * np.sum(np.sqrt(2 * row / (math.pi * n)))
        assert 0.5 * np.abs(emp - row).sum() < 0.01 + 2 * null


class TestAmplitude:
    def test_shape_and_sums(self, params):
        g = small_grid(params)
        t = dmc.amplitude_transition(g, params)
        assert t.shape == (g.n_rings + 1, g.n_rings + 2)
        np.testing.assert_allclose(t.probs.sum(1), 1)
        assert t.orbits is None

    def test_gamma_invariant(self, params, linear_params):
        g = small_grid(params)
        a = dmc.amplitude_transition(g, params).probs
        b = dmc.amplitude_transition(g, linear_params).probs
        np.testing.assert_array_equal(a, b)

    def test_ring_marginal_agrees(self, params):
        g = small_grid(params)
        joint = dmc.ring_marginal(dmc.transition_closed_form(g, params), g)
        amp = dmc.amplitude_transition(g, params)
        np.testing.assert_allclose(joint.probs, amp.probs, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.0, 0.05))
    def test_rows_at_any_radius(self, r0):
        p = FiberParams(1.27, 5e-9, 5000.0)
        g = dmc.build_grid(10, 1, 0.06)
        probs, deficit = dmc.amplitude_rows(g, p, [r0])
        assert probs.shape == (1, 12)
        assert abs(probs.sum() - 1) < 1e-12
        assert deficit < 1e-3


class TestPropagator:
    def test_one_step_linear_is_gaussian_blur(self, linear_params):
        p = linear_params
        g = dmc.build_grid(8, 8, 3 * math.sqrt(p.noise_power))
        prop = dmc.transition_propagator(g, p, 1, refine=6)
        closed = dmc.transition_closed_form(g, p)
        assert np.max(0.5 * np.abs(prop.probs - closed.probs).sum(1)) < 0.02

    @pytest.mark.slow
    def test_agrees_with_closed_form(self, params, desk):
        g = desk.with_overrides(grid=(80, 96)).grid.build()
        prop = dmc.transition_propagator(g, params, 200)
        closed = dmc.transition_closed_form(g, params)
        tv = 0.5 * np.abs(prop.probs - closed.probs).sum(1)
        assert tv.max() < 0.02

    @pytest.mark.filterwarnings("ignore:one-step noise")
    def test_small_noise_concentrates_on_rotated_point(self):
        p = FiberParams(1.27, 1e-13, 5000.0)
        g = dmc.build_grid(20, 64, 0.04)
        prop = dmc.transition_propagator(g, p, 50)
        i = 10
        r0 = prop.input_radii[i]
        expected = g.bin_of(r0 * np.exp(1j * p.gamma * r0**2 * p.length))
        assert prop.probs[i].argmax() == expected
        assert prop.probs[i, expected] > 0.9

    def test_rejects_bad_inputs(self, params):
        g = small_grid(params)
        with pytest.raises(ValueError):
            dmc.transition_propagator(g, params, 0)
        with pytest.raises(ValueError):
            dmc.transition_propagator(g, params, 10, scheme="rk4")


class TestSerialisation:
    def test_binary_roundtrip(self, params):
        t = dmc.transition_closed_form(small_grid(params, 4, 4), params)
        buf = io.BytesIO()
        dmc.save_binary(t, buf)
        buf.seek(0)
        back = dmc.load_binary(buf)
        np.testing.assert_array_equal(back.probs, t.probs)
        np.testing.assert_array_equal(back.orbits, t.orbits)

    def test_binary_file_and_no_orbits(self, tmp_path, params):
        t = dmc.amplitude_transition(small_grid(params, 4, 4), params)
        dmc.save_binary(t, tmp_path / "a.bin")
        back = dmc.load_binary(tmp_path / "a.bin")
        assert back.orbits is None
        np.testing.assert_array_equal(back.input_radii, t.input_radii)

    def test_bad_magic(self):
        with pytest.raises(ValueError):
            dmc.load_binary(io.BytesIO(b"nonsense" * 4))

    def test_csv(self, params):
        t = dmc.amplitude_transition(small_grid(params, 3, 1), params)
        buf = io.StringIO()
        dmc.to_csv(t, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0].startswith("r0,phi0,p0,")
        assert len(lines) == 1 + t.shape[0]
        np.testing.assert_allclose([float(x) for x in lines[2].split(",")[2:]], t.probs[1])
