"""Special functions used by the channel model.

The modified Bessel function of the first kind is needed at complex
arguments whose modulus routinely exceeds 700, so it is evaluated in
logarithmic form: ``log I_m(z)`` is returned as a complex number and the
value itself is only formed on request.  Two evaluation paths are used:

* an ascending power series for small, not-too-oscillatory arguments;
* Miller's backward recurrence on the ratios ``I_k / I_{k-1}``, normalised
  with the generating-function sum ``exp(z) = I_0(z) + 2 sum_k I_k(z)``.

Arguments with negative real part are reflected with
``I_m(-z) = (-1)^m I_m(z)`` so both paths only ever see ``Re z >= 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import integrate
from scipy import special as sps

# Power series is used when |z| <= SERIES_RADIUS and the cancellation
# estimate |z| - Re(z) stays below SERIES_CANCELLATION (in nats).  The
# second guard matters near the imaginary axis where the series terms
# are ~exp(|z|) while the sum is ~exp(Re z).
SERIES_RADIUS = 30.0
SERIES_CANCELLATION = 9.0

# Largest |x| accepted by hyp_1122.  Beyond this the alternating series
# for negative x loses all significant digits.
HYP_1122_RADIUS = 50.0


@dataclass(frozen=True)
class ScaledComplex:
    """Complex number stored as ``mantissa * exp(log_scale)``.

    The mantissa has unit modulus unless the value is exactly zero, in which
    case both fields are 0.
    """

    mantissa: complex
    log_scale: float

    @classmethod
    def from_log(cls, log_value):
        log_value = complex(log_value)
        if not np.isfinite(log_value.real):
            return cls(0j, 0.0)
        return cls(complex(np.exp(1j * log_value.imag)), log_value.real)

    def log(self):
        if self.mantissa == 0:
            return complex(-math.inf, 0.0)
        return complex(self.log_scale, np.angle(self.mantissa))

    @property
    def value(self):
        """Plain complex value; overflows to inf for large scales."""
        if self.mantissa == 0:
            return 0j
        with np.errstate(over="ignore"):
            return self.mantissa * np.exp(self.log_scale)

    def scaled(self, shift):
        """Value multiplied by ``exp(-shift)``, e.g. ``shift=|Re z|`` for ive."""
        if self.mantissa == 0:
            return 0j
        return self.mantissa * np.exp(self.log_scale - shift)

    def __mul__(self, other):
        if not isinstance(other, ScaledComplex):
            return NotImplemented
        return ScaledComplex(self.mantissa * other.mantissa,
                             self.log_scale + other.log_scale)


@numba.njit(cache=True)
def _series_log_iv(m, z):
    if z == 0:
        if m == 0:
            return 0j
        return complex(-np.inf, 0.0)
    q = z * z / 4.0
    term = 1.0 + 0j
    total = 1.0 + 0j
    k = 0
    small = 0
    while small < 3 and k < 500:
        term = term * q / ((k + 1.0) * (m + k + 1.0))
        total += term
        if abs(term) < 1e-17 * abs(total):
            small += 1
        else:
            small = 0
        k += 1
    return m * np.log(z / 2.0) - math.lgamma(m + 1.0) + np.log(total)


@numba.njit(cache=True)
def _miller_log_iv(m, z):
    az = abs(z)
    ay = abs(z.imag)
    # real-dominant z: I_k decays like exp(-k^2 / 2|z|); imaginary-dominant
    # z behaves like J_k, which only decays past k ~ |Im z|
    top = int(max(math.sqrt(m * m + 100.0 * az),
                  m + ay + 20.0 * (ay ** (1.0 / 3.0) + 1.0))) + 30
    ratio = 0j          # r_k = I_k/I_{k-1}, starts as r_{top+1} = 0
    horner = 1.0 + 0j   # H_k = 1 + r_{k+1} H_{k+1}
    log_prod = 0j       # sum of log r_k for k <= m
    two_over_z = 2.0 / z
    for k in range(top, 0, -1):
        horner = 1.0 + ratio * horner
        ratio = 1.0 / (k * two_over_z + ratio)
        if k <= m:
            log_prod += np.log(ratio)
    log_i0 = z - np.log(1.0 + 2.0 * ratio * horner)
    return log_i0 + log_prod


@numba.njit(cache=True)
def _log_iv_scalar(m, z):
    # evaluate in the upper half plane so that conjugate inputs give
    # bit-for-bit conjugate outputs
    if math.copysign(1.0, z.imag) < 0:
        return np.conj(_log_iv_scalar(m, np.conj(z)))
    flip = False
    if z.real < 0:
        z = -z
        flip = m % 2 == 1
    az = abs(z)
    if az <= SERIES_RADIUS and az - z.real <= SERIES_CANCELLATION:
        out = _series_log_iv(m, z)
    else:
        out = _miller_log_iv(m, z)
    if flip:
        out += 1j * np.pi
    return out


@numba.njit(cache=True)
def _log_iv_flat(m, z, out):
    for i in range(z.size):
        out[i] = _log_iv_scalar(m[i], z[i])


def log_besseli(order, z):
    """Complex logarithm of ``I_order(z)``, vectorised over numpy broadcasting.

    Parameters
    ----------
    order : int or array_like of int
        Non-negative integer orders.
    z : complex or array_like
        Arguments.  Any finite complex value is accepted.

    Returns
    -------
    ndarray of complex
        ``log I_order(z)``.  The imaginary part is defined modulo 2*pi.
        Exact zeros (``z == 0`` with ``order > 0``) give ``-inf``.
    """
    order = np.asarray(order)
    z = np.asarray(z, dtype=complex)
    if not np.issubdtype(order.dtype, np.integer):
        if not np.all(np.mod(order, 1) == 0):
            raise ValueError("Bessel order must be integer")
        order = order.astype(np.int64)
    if np.any(order < 0):
        raise ValueError("Bessel order must be non-negative")
    if not np.all(np.isfinite(z)):
        raise ValueError("Bessel argument must be finite")
    m_b, z_b = np.broadcast_arrays(order.astype(np.int64), z)
    out = np.empty(z_b.size, dtype=complex)
    _log_iv_flat(np.ascontiguousarray(m_b).ravel(),
                 np.ascontiguousarray(z_b).ravel(), out)
    return out.reshape(z_b.shape)


def besseli_scaled(order, z):
    """Modified Bessel function ``I_order(z)`` in overflow-safe form.

    Parameters
    ----------
    order : int
        Non-negative integer order.
    z : complex
        Argument; ``|z|`` may be far beyond the float64 exponent range of
        ``exp(|z|)``.

    Returns
    -------
    ScaledComplex
        ``mantissa * exp(log_scale)`` equal to ``I_order(z)``.

    Notes
    -----
    Close to the imaginary axis ``I_m`` oscillates (it is a Bessel ``J`` in
    disguise) and near its zeros only absolute, not relative, accuracy is
    attainable.
    """
    if isinstance(order, (float, np.floating)) and not float(order).is_integer():
        raise ValueError("Bessel order must be integer")
    lv = log_besseli(int(order), complex(z))
    return ScaledComplex.from_log(complex(lv))


def erfi(x):
    """Imaginary error function ``-i erf(i x)`` for real ``x`` (scipy's
    implementation, with a finiteness check).  Overflows for ``|x| > 26.6``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("erfi argument must be finite")
    out = sps.erfi(x)
    return out if out.ndim else float(out)


def hyp_1122(x):
    """Generalised hypergeometric ``2F2(1, 1; 3/2, 2; x)``.

    Summed from the term ratio ``(k+1) / ((k+3/2)(k+2))``.  Raises
    ``ValueError`` for ``|x| > HYP_1122_RADIUS``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > HYP_1122_RADIUS):
        raise ValueError(f"hyp_1122 argument outside |x| <= {HYP_1122_RADIUS}")
    term = np.ones_like(x)
    out = np.ones_like(x)
    for k in range(1000):
        term = term * x * (k + 1.0) / ((k + 1.5) * (k + 2.0))
        out = out + term
        if np.all(np.abs(term) <= 1e-17 * np.abs(out)):
            break
    return out if out.ndim else float(out)


def f_aux(x, alpha):
    """Auxiliary function ``pi/2 * erfi(sqrt(a)) - a * 2F2(1,1;3/2,2;a)``
    with ``a = alpha**2 * x``.

    Used by the conditional-entropy bounds in :mod:`fibercap.bounds`.
    """
    a = alpha**2 * np.asarray(x, dtype=float)
    if np.any(a < 0):
        raise ValueError("f_aux needs alpha**2 * x >= 0")
    return 0.5 * math.pi * erfi(np.sqrt(a)) - a * hyp_1122(a)


def _log_iv_of_log(m, log_x):
    """``log I_m(x)`` for real ``x = exp(log_x) > 0``, usable when ``x``
    underflows: below 1e-150 the leading series term is exact in float64."""
    if log_x < -345.0:
        return m * (log_x - math.log(2.0)) - math.lgamma(m + 1.0)
    return float(log_besseli(m, math.exp(log_x)).real)


def verify_identity_product(m, a, b, c):
    """Both sides of ``int_0^inf x e^{-a x^2} I_m(bx) I_m(cx) dx
    = e^{(b^2+c^2)/4a} I_m(bc/2a) / (2a)``.

    The left side is computed by adaptive quadrature of the integrand
    rescaled by the right side's magnitude, then scaled back, so moderately
    large parameters do not overflow inside the integrator.

    Returns
    -------
    lhs, rhs : float
    """
    if a <= 0:
        raise ValueError("integral diverges for a <= 0")
    m, a, b, c = int(m), float(a), float(b), float(c)
    if m < 0:
        raise ValueError("order must be non-negative")
    sign_rhs = (-1.0) ** (m * (b * c < 0))
    if m > 0 and (b == 0 or c == 0):
        return 0.0, 0.0
    log_rhs = ((b * b + c * c) / (4 * a) - math.log(2 * a)
               + _log_iv_of_log(m, math.log(abs(b)) + math.log(abs(c)) - math.log(2 * a))
               if b and c else (b * b + c * c) / (4 * a) - math.log(2 * a))
    peak = (abs(b) + abs(c)) / (2 * a)
    width = 1.0 / math.sqrt(2 * a)
    upper = peak + 40 * width

    def integrand(x):
        if x <= 0:
            return 0.0
        lx = math.log(x)
        lv = lx - a * x * x - log_rhs
        # a zero b or c here means m == 0 and I_0(0) = 1
        if b:
            lv += _log_iv_of_log(m, math.log(abs(b)) + lx)
        if c:
            lv += _log_iv_of_log(m, math.log(abs(c)) + lx)
        return math.exp(lv)

    pts = [p for p in (peak - 5 * width, peak, peak + 5 * width) if 0 < p < upper]
    val, _ = integrate.quad(integrand, 0.0, upper, points=pts or None,
                            epsabs=0.0, epsrel=1e-13, limit=500)
    sign_lhs = (-1.0) ** (m * ((b < 0) + (c < 0)))
    scale = math.exp(log_rhs)
    return sign_lhs * val * scale, sign_rhs * scale


def verify_identity_phase(m, x, theta0):
    """Both sides of ``(1/2pi) int_0^{2pi} exp(-j m t + x cos(t - theta0)) dt
    = I_m(x) exp(-j m theta0)``.

    The integrand is periodic and entire, so the trapezoid rule with enough
    nodes is exact to rounding; it replaces adaptive quadrature here.
    """
    m, x, theta0 = int(m), float(x), float(theta0)
    if not (math.isfinite(x) and math.isfinite(theta0)):
        raise ValueError("arguments must be finite")
    m = abs(m)
    n = 2 * int(abs(x) + m) + 64
    t = np.arange(n) * (2 * math.pi / n)
    shift = abs(x)
    vals = np.exp(-1j * m * t + x * np.cos(t - theta0) - shift)
    lhs = complex(vals.mean()) * math.exp(shift)
    rhs = besseli_scaled(m, x).value * np.exp(-1j * m * theta0)
    return lhs, complex(rhs)
