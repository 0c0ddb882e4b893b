"""Named parameter sets and the physical constants behind them.

The per-sample noise power is ``N = sigma2 * L = 2 * B * S`` where ``S`` is
the accumulated noise spectral density at the receiver (W/Hz) and ``B`` the
signal bandwidth.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .channel import FiberParams
from .dmc import build_grid

PLANCK = 6.626e-34          # J s
CENTER_FREQ = 193.55e12     # Hz
N_SP = 1.0
LOSS_DB_PER_KM = 0.2
LOSS_PER_KM = LOSS_DB_PER_KM * math.log(10) / 10     # 0.0461 / km
GAMMA = 1.27                # 1 / (W km)
BANDWIDTH = 125e9           # Hz
LENGTH = 5000.0             # km
PEAK_POWER = 0.01           # W


def ase_density():
    """ASE noise density ``n_sp h nu alpha`` in W / (km Hz)."""
    return N_SP * PLANCK * CENTER_FREQ * LOSS_PER_KM


def noise_power_from_density(density, bandwidth=BANDWIDTH):
    """Per-sample noise power ``2 B S`` for an accumulated density ``S`` in W/Hz."""
    return 2.0 * bandwidth * density


@dataclass(frozen=True)
class GridSpec:
    n_rings: int
    n_phases: int
    r_max: float
    spacing: str = "uniform"

    def build(self):
        return build_grid(self.n_rings, self.n_phases, self.r_max, spacing=self.spacing)


@dataclass(frozen=True)
class SweepSpec:
    snr_db_min: float
    snr_db_max: float
    n_points: int

    def snr_db(self):
        return np.linspace(self.snr_db_min, self.snr_db_max, self.n_points)

    def powers(self, noise_power):
        return noise_power * 10 ** (self.snr_db() / 10)


@dataclass(frozen=True)
class Preset:
    """A fully concrete run configuration."""

    name: str
    params: FiberParams
    grid: GridSpec
    sweep: SweepSpec
    peak: float | None = PEAK_POWER
    power: float | None = None      # single operating point for pdf/sample
    seed: int = 0

    def with_overrides(self, gamma=None, sigma2=None, length=None, grid=None, seed=None):
        params = FiberParams(
            self.params.gamma if gamma is None else gamma,
            self.params.sigma2 if sigma2 is None else sigma2,
            self.params.length if length is None else length,
        )
        out = replace(self, params=params)
        if grid is not None:
            out = replace(out, grid=replace(self.grid, n_rings=grid[0], n_phases=grid[1]))
        if seed is not None:
            out = replace(out, seed=seed)
        return out

    def to_dict(self):
        d = asdict(self)
        d["params"] = {"gamma": self.params.gamma, "sigma2": self.params.sigma2,
                       "length": self.params.length, "noise_power": self.params.noise_power}
        return d


def _fiber(density, gamma=GAMMA, length=LENGTH):
    return FiberParams(gamma, noise_power_from_density(density) / length, length)


def _peak_grid(params, n_rings, n_phases, peak=PEAK_POWER, sigmas=6.0):
    # the outermost ring must reach the peak amplitude plus the noise tail
    return GridSpec(n_rings, n_phases, math.sqrt(peak) + sigmas * math.sqrt(params.noise_power / 2))


def _make_presets():
    low_noise = _fiber(1e-16)      # 0.1 uW/GHz
    high_noise = _fiber(1e-15)     # 1 uW/GHz
    desk = low_noise
    return {
        "paper-fig4": Preset("paper-fig4", low_noise, _peak_grid(low_noise, 100, 64),
                             SweepSpec(-5.0, 19.0, 20), power=1e-3),
        "paper-fig7": Preset("paper-fig7", high_noise, _peak_grid(high_noise, 60, 64),
                             SweepSpec(2.5, 13.0, 2), power=high_noise.noise_power * 10**0.25),
        # single-point studies: 0.5 mW gives about 0.5 rad of nonlinear phase noise
        "desk": Preset("desk", desk, GridSpec(50, 64, math.sqrt(5e-4) + 6 * math.sqrt(desk.noise_power)),
                       SweepSpec(0.0, 16.0, 9), peak=None, power=5e-4),
    }


PRESETS = _make_presets()


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
