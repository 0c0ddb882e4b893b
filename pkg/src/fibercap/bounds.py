"""Closed-form capacity bounds and the power/noise regime map.

All values are in nats.  ``N = sigma2 * L`` is the accumulated noise power
and ``rho = P / N`` the SNR.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .special import f_aux

EULER_GAMMA = 0.57721566490153286
ALPHA_1 = (3 + math.sqrt(3)) / 6
ALPHA_2 = (3 - math.sqrt(3)) / 6
HALFGAUSS_POWER_FRACTION = 1 - 2 / math.pi

# ">>" and "<<" in the regime conditions
MUCH_GREATER = 10.0
MUCH_LESS = 0.1


def _check_power(P):
    if not P > 0:
        raise ValueError("power must be positive")


def lb_theorem1(rho):
    """``C >= log(rho)/2 - 1/2`` for any SNR ``rho > 0``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    return 0.5 * math.log(rho) - 0.5


def lb_high(P, params):
    """High-power bound from the half-Gaussian input.

    Only the power ``(1 - 2/pi) P`` of the half-Gaussian amplitude around its
    mean counts, which gives ``log((1 - 2/pi) rho)/2 - 1/2``.
    """
    _check_power(P)
    rep = regime_classify(P, params)
    if not (rep.region == "high-power" and rep.clear):
        warnings.warn("lb_high evaluated outside the high-power regime", RuntimeWarning, stacklevel=2)
    return lb_theorem1(HALFGAUSS_POWER_FRACTION * P / params.noise_power)


def mean_log_halfgaussian(P, noise_power, q2):
    """``E[log(R0^2 + q2 N)] / 2`` for a half-Gaussian ``R0`` with ``E R0^2 = P``.

    Equals ``log(P/2)/2 - zeta/2 + f_aux(N / 2P, sqrt(q2))``.
    """
    return 0.5 * math.log(P / 2) - 0.5 * EULER_GAMMA + f_aux(noise_power / (2 * P), math.sqrt(q2))


def entropy_halfgaussian_output(P, params):
    """Differential entropy of ``(R^2, Phi)`` at the output for the
    half-Gaussian input, using the large-power form of the output density:
    ``1.5 log(pi) + log(2P + N) - zeta/2 + 1/2``."""
    _check_power(P)
    return 1.5 * math.log(math.pi) + math.log(2 * P + params.noise_power) - 0.5 * EULER_GAMMA + 0.5


def cond_entropy_ub(P, params):
    """Gaussian upper bound on ``h(R^2, Phi | R0, Phi0)`` for the half-Gaussian
    input under the algebraic (unwrapped-phase) model.

    The conditional covariance of ``(R^2, Phi/(gamma L))`` has determinant
    ``(N^2/3)(R0^2 + a1 N)(R0^2 + a2 N)`` with ``a1 + a2 = 1``,
    ``a1 a2 = 1/6``; averaging its log over the input gives two ``f_aux``
    corrections.
    """
    _check_power(P)
    n = params.noise_power
    return (math.log(params.gamma * params.length) + math.log(2 * math.pi * math.e)
            + 0.5 * math.log(n * n / 3)
            + mean_log_halfgaussian(P, n, ALPHA_1) + mean_log_halfgaussian(P, n, ALPHA_2))


def _medium_check(P, params):
    rep = regime_classify(P, params)
    if not (rep.region == "medium-power" and rep.clear):
        warnings.warn(f"medium-power bound evaluated outside its validity range ({rep.region}, "
                      f"snr={rep.snr:.3g}, phase_metric={rep.phase_metric:.3g})",
                      RuntimeWarning, stacklevel=3)
    return rep


def lb_medium(P, params):
    """Medium-power lower bound

        log(rho)/2 + log(3 pi / (gamma^2 P N L^2))/2 + (zeta - 1)/2
        - f_aux(N/2P, sqrt(a1)) - f_aux(N/2P, sqrt(a2)).

    Valid for ``N << P << 6 pi^2 / (gamma^2 N L^2)``; outside that range the
    value is still returned with a warning.  It does not depend on ``P``
    except through the ``f_aux`` terms, and it grows without bound as
    ``gamma -> 0`` (where it is meaningless).
    """
    _check_power(P)
    if params.gamma <= 0:
        raise ValueError("lb_medium needs gamma > 0")
    _medium_check(P, params)
    n = params.noise_power
    x = n / (2 * P)
    lg = params.gamma * params.length
    return (0.5 * math.log(P / n) + 0.5 * math.log(3 * math.pi / (lg * lg * P * n))
            + 0.5 * (EULER_GAMMA - 1)
            - f_aux(x, math.sqrt(ALPHA_1)) - f_aux(x, math.sqrt(ALPHA_2)))


def lb_medium_composed(P, params):
    """``entropy_halfgaussian_output - cond_entropy_ub``.

    Equal to ``lb_medium + log(2 + N/P)``; see the project notes for the
    difference between the two.
    """
    _check_power(P)
    _medium_check(P, params)
    return entropy_halfgaussian_output(P, params) - cond_entropy_ub(P, params)


@dataclass(frozen=True)
class RegimeReport:
    """Position of an operating point in the (power, noise) plane.

    ``boundaries`` are the powers at which ``snr = 1`` and
    ``phase_metric = 1``; ``clear`` is True when the point is at least a
    factor 10 away from the boundaries that define its region.
    """

    snr: float
    phase_metric: float
    region: str
    boundaries: tuple
    clear: bool

    def to_dict(self):
        return asdict(self)


def phase_metric(P, params):
    """``gamma^2 P sigma2 L^3 / (6 pi^2)``: nonlinear phase-noise variance scale."""
    return params.gamma**2 * P * params.sigma2 * params.length**3 / (6 * math.pi**2)


def regime_classify(P, params):
    """Place ``P`` in the (power, noise) plane.

    * ``high-power``: phase metric above 1;
    * ``low-SNR``: otherwise, SNR below 1;
    * ``medium-power``: SNR above 1 and phase metric below 1.

    The regions of validity of the bounds need ``>>``/``<<`` rather than
    ``>``/``<``; a point is ``clear`` when those hold with ratio 10 (0.1),
    i.e. high-power needs ``phase_metric > 10``, low-SNR ``snr < 0.1`` and
    medium-power both ``snr > 10`` and ``phase_metric < 0.1``.
    """
    _check_power(P)
    snr = P / params.noise_power
    metric = phase_metric(P, params)
    if metric > 1:
        region, clear = "high-power", metric > MUCH_GREATER
    elif snr < 1:
        region, clear = "low-SNR", snr < MUCH_LESS
    else:
        region, clear = "medium-power", snr > MUCH_GREATER and metric < MUCH_LESS
    unit = phase_metric(1.0, params)
    upper = 1.0 / unit if unit > 0 else math.inf
    return RegimeReport(snr, metric, region, (params.noise_power, upper), clear)


def bounds_table(powers, params):
    """Bound columns for a power sweep (NaN where a bound is undefined)."""
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for P in np.atleast_1d(powers):
            rep = regime_classify(P, params)
            med = lb_medium(P, params) if params.gamma > 0 else math.nan
            rows.append({
                "lb_theorem1": lb_theorem1(P / params.noise_power),
                "lb_high": lb_high(P, params),
                "lb_medium": med if rep.region == "medium-power" and rep.clear else math.nan,
                "region": rep.region,
            })
    return rows
