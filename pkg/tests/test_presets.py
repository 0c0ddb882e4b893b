import math

import numpy as np
import pytest

from fibercap import presets
from fibercap.bounds import regime_classify


def test_ase_density():
    # n_sp h nu alpha with 0.2 dB/km loss
    assert presets.ase_density() == pytest.approx(5.906e-21, rel=1e-3)
    assert presets.LOSS_PER_KM == pytest.approx(0.04605, rel=1e-3)


def test_noise_power_from_density():
    assert presets.noise_power_from_density(1e-16) == pytest.approx(2.5e-5)


@pytest.mark.parametrize("name, noise", [("paper-fig4", 2.5e-5), ("paper-fig7", 2.5e-4), ("desk", 2.5e-5)])
def test_noise_powers(name, noise):
    pre = presets.get_preset(name)
    assert pre.params.noise_power == pytest.approx(noise)
    assert pre.params.gamma == presets.GAMMA
    assert pre.params.length == presets.LENGTH


def test_sweep_ends_at_fifth_of_peak():
    pre = presets.get_preset("paper-fig4")
    powers = pre.sweep.powers(pre.params.noise_power)
    assert len(powers) == 20
    assert powers[-1] == pytest.approx(0.2 * pre.peak, rel=0.01)


def test_two_point_sweep():
    pre = presets.get_preset("paper-fig7")
    np.testing.assert_allclose(pre.sweep.snr_db(), [2.5, 13.0])
    assert 10 * math.log10(pre.power / pre.params.noise_power) == pytest.approx(2.5)


@pytest.mark.parametrize("name", ["paper-fig4", "paper-fig7"])
def test_grids_reach_peak(name):
    pre = presets.get_preset(name)
    grid = pre.grid.build()
    assert grid.edges[-1] > math.sqrt(pre.peak) + 5 * math.sqrt(pre.params.noise_power / 2)


def test_desk_is_medium_power():
    pre = presets.get_preset("desk")
    rep = regime_classify(pre.power, pre.params)
    assert rep.region == "medium-power" and rep.clear


def test_overrides():
    pre = presets.get_preset("desk").with_overrides(gamma=0.5, grid=(10, 12), seed=7)
    assert pre.params.gamma == 0.5
    assert pre.params.sigma2 == presets.get_preset("desk").params.sigma2
    assert (pre.grid.n_rings, pre.grid.n_phases) == (10, 12)
    assert pre.seed == 7
    with pytest.raises(ValueError):
        pre.with_overrides(length=-1.0)


def test_to_dict_is_plain():
    d = presets.get_preset("paper-fig4").to_dict()
    assert d["params"]["noise_power"] == pytest.approx(2.5e-5)
    assert d["grid"]["n_rings"] == 100


def test_unknown():
    with pytest.raises(KeyError, match="desk"):
        presets.get_preset("nope")
