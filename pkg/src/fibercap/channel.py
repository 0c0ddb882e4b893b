"""Closed-form law of the per-sample zero-dispersion fiber channel.

With dispersion neglected each time sample obeys

    dQ/dz = j gamma |Q|^2 Q + V(z),    E[V(z) V*(z')] = sigma2 delta(z - z'),

and the output ``Q(L)`` given ``Q(0) = r0 exp(j phi0)`` has a density that
is a Fourier series in the phase difference.  Writing ``N = sigma2 * L`` for
the accumulated noise power and

    x_m = sqrt(j m gamma sigma2) L,
    a_m = x_m coth(x_m) / N,     b_m = x_m / sinh(x_m) / N,

the density in polar coordinates is

    f(r, phi | r0, phi0) = sum_{m in Z} (r b_m / pi) exp(-a_m (r^2 + r0^2))
                           I_m(2 b_m r r0) exp(j m (phi - phi0)).

The m = 0 term is the Rician amplitude law divided by 2 pi, and the terms
for +m and -m are complex conjugates, so only m >= 1 is evaluated.  The
nonlinear rotation is already carried by the phases of ``a_m`` and ``b_m``.

All logs are natural; powers are in W, lengths in km.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special as sps

from .special import ScaledComplex, log_besseli

TWO_PI = 2.0 * math.pi

# below this |x_m| the closed forms lose digits to cancellation and the
# Taylor series (error < |x|^8) takes over
_SMALL_X = 1e-2

DEFAULT_TOL = 1e-12
M_MAX = 4096


@dataclass(frozen=True)
class FiberParams:
    """Kerr coefficient ``gamma`` (1/(W km)), noise intensity ``sigma2``
    (W/km) and fiber ``length`` (km).

    ``sigma2 = 0`` is accepted for the samplers; the densities need noise.
    """

    gamma: float
    sigma2: float
    length: float

    def __post_init__(self):
        for name in ("gamma", "sigma2", "length"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
        if self.gamma < 0 or self.sigma2 < 0:
            raise ValueError("gamma and sigma2 must be >= 0")
        if self.length <= 0:
            raise ValueError("length must be positive")

    @property
    def noise_power(self):
        """Accumulated noise power ``sigma2 * length`` in W."""
        return self.sigma2 * self.length

    def snr(self, power):
        return power / self.noise_power

    def scaled(self, lam):
        """Parameters of the equivalent channel seen by ``lam * Q``."""
        return FiberParams(self.gamma / lam**2, self.sigma2 * lam**2, self.length)


@dataclass(frozen=True)
class PolarSample:
    r: float
    phi: float

    def __post_init__(self):
        if not (self.r >= 0 and math.isfinite(self.r)):
            raise ValueError("amplitude must be finite and >= 0")
        if not math.isfinite(self.phi):
            raise ValueError("phase must be finite")
        object.__setattr__(self, "phi", float(self.phi % TWO_PI))

    @classmethod
    def from_complex(cls, q):
        return cls(abs(q), float(np.angle(q)))

    def to_complex(self):
        return self.r * complex(math.cos(self.phi), math.sin(self.phi))


@dataclass(frozen=True)
class FourierCoeffPair:
    """``a_m`` and ``b_m`` for one order; ``b`` is kept as a log because it
    decays like ``exp(-|x_m|/sqrt(2))`` and underflows for large orders."""

    a: complex
    log_b: complex
    order: int

    @property
    def b(self):
        return complex(np.exp(self.log_b))

    @property
    def b_scaled(self):
        return ScaledComplex.from_log(self.log_b)


def _coefficients(m, params):
    """Vectorised ``(a_m, log b_m)`` for integer array ``m >= 0``."""
    m = np.asarray(m, dtype=float)
    n = _noise(params)
    x = np.sqrt(m * params.gamma * params.sigma2) * params.length * np.exp(0.25j * math.pi)
    small = np.abs(x) < _SMALL_X
    a = np.empty(x.shape, dtype=complex)
    log_b = np.empty(x.shape, dtype=complex)
    x2 = x[small] ** 2
    a[small] = (1 + x2 / 3 - x2**2 / 45 + 2 * x2**3 / 945) / n
    log_b[small] = np.log((1 - x2 / 6 + 7 * x2**2 / 360 - 31 * x2**3 / 15120) / n)
    xl = x[~small]
    e = -np.expm1(-2 * xl)          # 1 - exp(-2x), Re x > 0
    a[~small] = xl * (2 - e) / e / n
    log_b[~small] = np.log(2 * xl / n) - xl - np.log(e)
    return a, log_b


def fourier_ab(m, params):
    """Fourier coefficients ``a_m``, ``b_m`` of the conditional density.

    Parameters
    ----------
    m : int
        Order, ``m >= 1``.
    params : FiberParams

    Returns
    -------
    FourierCoeffPair
    """
    if int(m) != m or m < 1:
        raise ValueError("order must be a positive integer")
    a, log_b = _coefficients(np.array([m]), params)
    return FourierCoeffPair(complex(a[0]), complex(log_b[0]), int(m))


def _noise(params):
    if params.noise_power <= 0:
        raise ValueError("the channel density needs sigma2 > 0")
    return params.noise_power


def _check_nonneg(name, v):
    if np.any(np.asarray(v) < 0) or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite and >= 0")


def log_amplitude_pdf(r, r0, params):
    """Log of the Rician amplitude density; ``-inf`` at ``r = 0``."""
    n = _noise(params)
    r = np.asarray(r, dtype=float)
    r0 = np.asarray(r0, dtype=float)
    z = 2 * r * r0 / n
    with np.errstate(divide="ignore"):
        return (np.log(2 * r / n) - (r * r + r0 * r0) / n
                + log_besseli(0, z).real)


def amplitude_pdf(r, r0, params):
    """Density of ``|q0 + Z|`` with ``Z ~ CN(0, sigma2 * L)``.

    ``(2r/N) exp(-(r^2 + r0^2)/N) I_0(2 r r0 / N)``, evaluated in log form.
    Does not depend on ``gamma``.
    """
    _check_nonneg("r", r)
    _check_nonneg("r0", r0)
    return np.exp(log_amplitude_pdf(r, r0, params))


@dataclass
class SeriesInfo:
    n_terms: int
    converged: bool
    n_clamped: int = 0
    clamped_mass: float = 0.0


def phase_coefficients(r, r0, params, tol=DEFAULT_TOL, m_max=M_MAX, block=32):
    """Normalised phase Fourier coefficients ``rho_m = g_m / g_0`` for m >= 1.

    ``rho_m(r, r0)`` is the m-th circular moment of the output phase
    (relative to ``phi0``) conditioned on the output amplitude ``r``.  It is
    bounded by 1 in modulus.

    Parameters
    ----------
    r, r0 : array_like
        Broadcastable amplitudes.
    tol : float
        Terms are added until ``|rho_m| < tol`` for three consecutive orders
        at every point.
    m_max : int
        Hard cap on the number of orders.

    Returns
    -------
    rho : ndarray, shape ``broadcast(r, r0).shape + (K,)``
        Coefficients for ``m = 1..K``.
    info : SeriesInfo
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    r, r0 = np.broadcast_arrays(np.asarray(r, float), np.asarray(r0, float))
    n = params.noise_power
    s = (r * r + r0 * r0)[..., None]
    rr = (r * r0)[..., None]
    log_i0 = log_besseli(0, 2 * rr / n).real
    blocks = []
    start = 1
    converged = False
    while start <= m_max:
        m = np.arange(start, min(start + block, m_max + 1))
        a, log_b = _coefficients(m, params)
        with np.errstate(divide="ignore", under="ignore"):
            z = 2 * np.exp(log_b) * rr
            lv = (log_b + math.log(n) - (a - 1 / n) * s
                  + log_besseli(m, z) - log_i0)
            rho = np.exp(lv)
        rho[~np.isfinite(lv.real)] = 0
        blocks.append(rho)
        start = m[-1] + 1
        tail = np.concatenate(blocks, axis=-1)[..., -3:]
        if tail.shape[-1] == 3 and np.all(np.abs(tail) < tol):
            converged = True
            break
    rho = np.concatenate(blocks, axis=-1)
    # drop the trailing orders that are below tol everywhere
    big = np.any(np.abs(rho.reshape(-1, rho.shape[-1])) >= tol, axis=0)
    k = int(np.nonzero(big)[0][-1]) + 1 if big.any() else 0
    if not converged:
        warnings.warn(f"phase series not converged after {m_max} orders",
                      RuntimeWarning, stacklevel=2)
    return rho[..., :k], SeriesInfo(k, converged)


def conditional_pdf(r, phi, r0, phi0, params, tol=DEFAULT_TOL, full_output=False):
    """Joint density of output amplitude and phase given the input.

    Parameters
    ----------
    r, phi : array_like
        Output amplitude and phase; broadcast against each other and against
        ``r0, phi0``.  Pass ``r[:, None], phi[None, :]`` for a polar grid.
    r0, phi0 : array_like
        Input amplitude and phase.
    params : FiberParams
    tol : float
        Series truncation threshold on the normalised coefficients.
    full_output : bool
        Also return a :class:`SeriesInfo` with truncation and clamping counts.

    Returns
    -------
    density : ndarray
        ``f(r, phi | r0, phi0)`` with respect to ``dr dphi``.
    """
    _check_nonneg("r", r)
    _check_nonneg("r0", r0)
    r = np.asarray(r, float)
    r0 = np.asarray(r0, float)
    rho, info = phase_coefficients(r, r0, params, tol)
    f_r = np.exp(log_amplitude_pdf(r, r0, params))
    dphi = np.asarray(phi, float) - np.asarray(phi0, float)
    out_shape = np.broadcast_shapes(f_r.shape, dphi.shape)
    series = np.ones(out_shape)
    if info.n_terms:
        # Re(rho_m e^{j m dphi}) term by term keeps memory at the output size
        for k in range(info.n_terms):
            series = series + 2 * np.real(rho[..., k] * np.exp(1j * (k + 1) * dphi))
    dens = f_r / TWO_PI * series
    neg = dens < 0
    info.n_clamped = int(np.count_nonzero(neg))
    info.clamped_mass = float(-dens[neg].sum()) if info.n_clamped else 0.0
    dens = np.where(neg, 0.0, dens)
    if full_output:
        return dens, info
    return dens


def conditional_pdf_at(out, in0, params, tol=DEFAULT_TOL):
    """Scalar convenience wrapper taking :class:`PolarSample` arguments."""
    return float(conditional_pdf(out.r, out.phi, in0.r, in0.phi, params, tol))


def gaussian_polar_pdf(r, phi, r0, phi0, noise_power):
    """Density of ``q0 + Z`` in polar coordinates (the ``gamma = 0`` law)."""
    d2 = r * r + r0 * r0 - 2 * r * r0 * np.cos(phi - phi0)
    return r / (math.pi * noise_power) * np.exp(-d2 / noise_power)


def halfgaussian_output_pdf(r, avg_power, params):
    """Output amplitude density when the input amplitude is half-Gaussian.

    The input amplitude has density ``sqrt(2/(pi P)) exp(-r0^2 / 2P)`` on
    ``r0 >= 0`` and a uniform phase.  Projecting the noise on the signal
    direction, the output amplitude is modelled as ``R0 + Z`` with
    ``Z ~ N(0, N/2)``, which gives the skew-normal law

        f(r) = exp(-r^2 / (2P + N)) / sqrt(pi (2P + N))
               * (1 + erf(r sqrt(2P / N) / sqrt(2P + N))).

    This is the exact expression before the large-``P/N`` approximation.  It
    is a density over ``r`` on the whole real line; its mass on ``r < 0`` is
    ``1/2 - atan(sqrt(2P/N)) / pi`` and vanishes as ``P/N`` grows.  The joint
    density over ``(r, phi)`` is this divided by ``2 pi``.
    """
    if avg_power <= 0:
        raise ValueError("avg_power must be positive")
    r = np.asarray(r, float)
    n = params.noise_power
    s = 2 * avg_power + n
    return (np.exp(-r * r / s) / math.sqrt(math.pi * s)
            * (1 + sps.erf(r * math.sqrt(2 * avg_power / n) / math.sqrt(s))))


def halfgaussian_negative_mass(avg_power, params):
    """Mass of :func:`halfgaussian_output_pdf` on ``r < 0``."""
    return 0.5 - math.atan(math.sqrt(2 * avg_power / params.noise_power)) / math.pi


def halfgaussian_input_pdf(r0, avg_power):
    """Half-Gaussian amplitude density with ``E[R0^2] = avg_power``."""
    r0 = np.asarray(r0, float)
    return np.where(r0 >= 0, math.sqrt(2 / (math.pi * avg_power))
                    * np.exp(-r0 * r0 / (2 * avg_power)), 0.0)
