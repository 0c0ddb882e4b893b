"""Independent samplers for the per-sample channel.

* :func:`split_step_sample` integrates the SDE with Euler-Maruyama steps.
* :func:`exact_path_sample` uses the pathwise solution
  ``Q(L) = (q0 + W(L)) exp(j gamma int |q0 + W|^2)`` on a sampled path.
* :func:`algebraic_sample` draws the same quantities from a truncated
  Karhunen-Loeve expansion of the Wiener process.
* :func:`fokker_planck_amplitude` integrates the amplitude PDE.

Random streams are split per fixed-size chunk with
``numpy.random.SeedSequence.spawn`` so that a given ``(seed, batch)`` always
produces the same samples regardless of how the work is scheduled.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

TWO_PI = 2.0 * math.pi
CHUNK = 1 << 15


@dataclass(frozen=True)
class SimConfig:
    n_steps: int
    seed: int
    batch: int

    def __post_init__(self):
        if self.n_steps < 1 or self.batch < 1:
            raise ValueError("n_steps and batch must be >= 1")


def _chunks(seed, batch):
    """Yield ``(generator, start, stop)`` for each fixed-size chunk."""
    n_chunks = -(-batch // CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    for i, ss in enumerate(children):
        start = i * CHUNK
        yield np.random.default_rng(ss), start, min(start + CHUNK, batch)


def _complex_normal(rng, size, var):
    shape = (size,) if np.isscalar(size) else tuple(size)
    z = rng.standard_normal((2,) + shape)
    return math.sqrt(var / 2) * (z[0] + 1j * z[1])


def split_step_sample(q0, params, cfg, scheme="euler"):
    """Euler-Maruyama integration of ``dQ = j gamma |Q|^2 Q dz + dW``.

    Parameters
    ----------
    q0 : complex
        Channel input.
    params : FiberParams
    cfg : SimConfig
    scheme : {"euler", "exponential"}
        ``"euler"`` applies ``Q += j eps gamma |Q|^2 Q`` (Ito stepping);
        ``"exponential"`` applies the exact rotation ``Q *= exp(j eps gamma |Q|^2)``
        which does not inflate the amplitude.

    Returns
    -------
    ndarray of complex, shape (batch,)
    """
    if scheme not in ("euler", "exponential"):
        raise ValueError(f"unknown scheme {scheme!r}")
    eps = params.length / cfg.n_steps
    q0 = complex(q0)
    if params.gamma * abs(q0) ** 2 * eps > 0.1:
        warnings.warn("nonlinear phase per step exceeds 0.1 rad; increase n_steps",
                      RuntimeWarning, stacklevel=2)
    ge = params.gamma * eps
    var = params.sigma2 * eps
    out = np.empty(cfg.batch, dtype=complex)
    for rng, lo, hi in _chunks(cfg.seed, cfg.batch):
        q = np.full(hi - lo, q0)
        for k in range(cfg.n_steps):
            p = q.real**2 + q.imag**2
            if scheme == "euler":
                q = q + 1j * ge * p * q
            else:
                q = q * np.exp(1j * ge * p)
            q += _complex_normal(rng, hi - lo, var)
            if not np.all(np.isfinite(q)):
                raise FloatingPointError(f"trajectory diverged at step {k}")
        out[lo:hi] = q
    return out


def exact_path_sample(q0, params, cfg):
    """Pathwise solution evaluated on a sampled Wiener path.

    The nonlinear phase ``gamma * int_0^L |q0 + W(z)|^2 dz`` is approximated
    by a left Riemann sum on ``n_steps`` intervals.  The noise enters
    additively, so the amplitude is exact for any ``n_steps``.
    """
    eps = params.length / cfg.n_steps
    q0 = complex(q0)
    var = params.sigma2 * eps
    out = np.empty(cfg.batch, dtype=complex)
    for rng, lo, hi in _chunks(cfg.seed, cfg.batch):
        w = np.zeros(hi - lo, dtype=complex)
        phase = np.zeros(hi - lo)
        for _ in range(cfg.n_steps):
            p = q0 + w
            phase += p.real**2 + p.imag**2
            w += _complex_normal(rng, hi - lo, var)
        out[lo:hi] = (q0 + w) * np.exp(1j * params.gamma * eps * phase)
    return out


@dataclass(frozen=True)
class KLNoise:
    """Truncated Karhunen-Loeve expansion of complex Brownian motion on [0, L].

    ``W(z) = sum_k X_k sigma_k psi_k(z)`` with ``sigma_k = 2 / ((2k-1) pi)``,
    ``psi_k(z) = sqrt(2) sin((2k-1) pi z / 2L)`` and ``X_k ~ CN(0, sigma2 L)``.
    The neglected variance fraction is ``2 * sum_{k>n} sigma_k^2``,
    roughly ``4 / (pi^2 n)``.
    """

    n_terms: int = 512

    def __post_init__(self):
        if self.n_terms < 1:
            raise ValueError("n_terms must be >= 1")

    @property
    def sigma(self):
        k = np.arange(1, self.n_terms + 1)
        return 2.0 / ((2 * k - 1) * math.pi)

    def psi(self, z, length):
        k = np.arange(1, self.n_terms + 1)
        return math.sqrt(2) * np.sin((2 * k - 1) * math.pi * np.asarray(z)[..., None] / (2 * length))

    def truncation_error(self):
        """Missing fraction of ``E|W(L)|^2``."""
        return 1.0 - 2.0 * float(np.sum(self.sigma**2))

    def draw(self, rng, size, noise_power):
        return _complex_normal(rng, (size, self.n_terms), noise_power)


def _kl_functionals(x, sig):
    # W(L), sqrt(3) * mean of W over [0, L], and mean of |W|^2
    alt = math.sqrt(2) * sig * np.where(np.arange(sig.size) % 2 == 0, 1.0, -1.0)
    z1 = x @ alt
    z2 = math.sqrt(6) * (x @ sig**2)
    z3 = (x.real**2 + x.imag**2) @ sig**2
    return z1, z2, z3


@dataclass
class AlgebraicOutput:
    r_sq: np.ndarray
    phi: np.ndarray

    def to_complex(self):
        return np.sqrt(self.r_sq) * np.exp(1j * self.phi)


def algebraic_sample(r0, phi0, params, kl=KLNoise(), seed=0, batch=10000,
                     linear_phase=False, wrap=True):
    """Sample received intensity and phase from the KL-based algebraic model.

    ``R^2 = |q0 + Z1|^2`` and
    ``Phi = phi0 + gamma L (r0^2 + (2/sqrt 3) Re(conj(q0) Z2) + Z3)``, with
    ``Z1 = W(L)``, ``Z2 = sqrt(3)/L int W`` and ``Z3 = 1/L int |W|^2`` computed
    from one set of KL coefficients, so ``E[Z1 conj(Z2)] = (sqrt(3)/2) sigma2 L``.

    The model drops the linear phase ``arg(q0 + Z1) - phi0``, which is small
    next to the nonlinear phase when ``r0^2 >> sigma2 L``.  Pass
    ``linear_phase=True`` to add it back, which makes the sample exact up to
    KL truncation.  ``wrap=False`` returns the phase without reduction
    modulo 2 pi, for moment checks.
    """
    if not isinstance(kl, KLNoise):
        kl = KLNoise(int(kl))
    q0 = r0 * complex(math.cos(phi0), math.sin(phi0))
    n = params.noise_power
    gl = params.gamma * params.length
    sig = kl.sigma
    r_sq = np.empty(batch)
    phi = np.empty(batch)
    for rng, lo, hi in _chunks(seed, batch):
        x = kl.draw(rng, hi - lo, n)
        z1, z2, z3 = _kl_functionals(x, sig)
        y = q0 + z1
        r_sq[lo:hi] = y.real**2 + y.imag**2
        ph = phi0 + gl * (r0 * r0 + 2 / math.sqrt(3) * np.real(np.conj(q0) * z2) + z3)
        if linear_phase:
            ph = ph + np.angle(y) - phi0
        phi[lo:hi] = np.mod(ph, TWO_PI) if wrap else ph
    return AlgebraicOutput(r_sq, phi)


def algebraic_covariance(r0, params):
    """Covariance of ``(R^2, Phi / (gamma L))`` under the algebraic model."""
    n = params.noise_power
    return (r0 * r0 * n * np.array([[2.0, 1.0], [1.0, 2.0 / 3.0]])
            + n * n * np.array([[1.0, 1.0 / 3.0], [1.0 / 3.0, 1.0 / 6.0]]))


@dataclass
class FPResult:
    r: np.ndarray
    density: np.ndarray
    mass: np.ndarray        # total mass after each step


def fokker_planck_amplitude(r0, params, n_r=2000, r_max=None, n_z=400,
                            width_cells=3.0, startup=4):
    """Integrate the amplitude Fokker-Planck equation to ``z = L``.

    The radial density obeys ``df/dz = (sigma2/4) d/dr (r d/dr (f/r))``.  With
    ``u = f/r`` this is a conservative diffusion ``r u_z = (sigma2/4)(r u_r)_r``
    that is discretised by finite volumes on cell centres ``(i + 1/2) h``:
    the face at ``r = 0`` carries no flux and ``u = 0`` is imposed just
    beyond ``r_max``.  Time stepping is Crank-Nicolson after ``startup``
    backward-Euler steps, which damp the oscillations CN would otherwise
    keep from the sharp initial bump.

    Parameters
    ----------
    r0 : float
        Input amplitude.  The initial density is a Gaussian bump of standard
        deviation ``width_cells * h`` at ``r0`` (a half-Gaussian at the
        origin when ``r0 = 0``).
    r_max : float, optional
        Defaults to ``r0 + 10 sqrt(sigma2 L)``.

    Returns
    -------
    FPResult
    """
    n_noise = params.noise_power
    if r_max is None:
        r_max = r0 + 10 * math.sqrt(n_noise)
    if r_max < r0 + 8 * math.sqrt(n_noise):
        raise ValueError("r_max must be at least r0 + 8 sqrt(sigma2 L)")
    h = r_max / n_r
    r = (np.arange(n_r) + 0.5) * h
    faces = np.arange(1, n_r + 1) * h          # right face of each cell
    w = width_cells * h
    f0 = np.exp(-0.5 * ((r - r0) / w) ** 2)
    f0 /= f0.sum() * h
    u = f0 / r

    d = params.sigma2 / 4.0
    dz = params.length / n_z
    # flux coefficients c_i between cell i and i+1; last one couples to u=0
    c = d * faces / h
    mdiag = r * h
    # K u: (K u)_i = c_i (u_{i+1} - u_i) - c_{i-1} (u_i - u_{i-1})
    kd = -(c + np.concatenate([[0.0], c[:-1]]))
    ku = c[:-1]

    def banded(theta):
        ab = np.zeros((3, n_r))
        ab[0, 1:] = -theta * dz * ku
        ab[1] = mdiag - theta * dz * kd
        ab[2, :-1] = -theta * dz * ku
        return ab

    def apply_k(v):
        out = kd * v
        out[:-1] += ku * v[1:]
        out[1:] += ku * v[:-1]
        return out

    ab_be, ab_cn = banded(1.0), banded(0.5)
    mass = np.empty(n_z)
    for step in range(n_z):
        if step < startup:
            rhs = mdiag * u
            u = solve_banded((1, 1), ab_be, rhs)
        else:
            rhs = mdiag * u + 0.5 * dz * apply_k(u)
            u = solve_banded((1, 1), ab_cn, rhs)
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"PDE solution diverged at step {step}")
        mass[step] = np.sum(r * u) * h
    return FPResult(r, r * u, mass)
