"""Ring-constellation quantisation of the channel.

Outputs are binned on a polar grid: an origin disk, ``N`` annuli each split
into ``M`` equal phase sectors, and one overflow bin beyond the last annulus.
Output index layout::

    0                       origin disk  [0, edges[0])
    1 + n*M + l             annulus n, sector l centred on l * 2pi/M
    1 + N*M                 overflow     [edges[N], inf)

Inputs are the points ``{0} U {r_1..r_N}`` at phase 0.  Because the channel
is rotation invariant, the row for input phase ``k * 2pi/M`` is the phase-0
row with each annulus rotated by ``k`` sectors, so only phase-0 rows are
stored.  Each output carries an *orbit* label (origin, annulus n, overflow);
averaging the output law over an orbit gives the output law of the
uniform-phase input, which is what :mod:`fibercap.capacity` uses.
"""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special as sps
from scipy import stats

from .channel import TWO_PI, log_amplitude_pdf, phase_coefficients

DEFAULT_QUAD = 4


@dataclass(frozen=True, eq=False)
class RingGrid:
    radii: np.ndarray
    edges: np.ndarray          # n_rings + 1 increasing bin edges
    n_phases: int
    spacing: str = "uniform"

    @property
    def n_rings(self):
        return self.radii.size

    @property
    def dphi(self):
        return TWO_PI / self.n_phases

    @property
    def n_outputs(self):
        return self.n_rings * self.n_phases + 2

    @property
    def phase_centres(self):
        return np.arange(self.n_phases) * self.dphi

    def orbits(self):
        lab = np.empty(self.n_outputs, dtype=np.int64)
        lab[0] = 0
        lab[1:-1] = 1 + np.repeat(np.arange(self.n_rings), self.n_phases)
        lab[-1] = self.n_rings + 1
        return lab

    def output_index(self, ring, sector):
        return 1 + ring * self.n_phases + sector % self.n_phases

    def bin_of(self, q):
        """Output index of complex samples ``q``."""
        q = np.asarray(q)
        r = np.abs(q)
        ring = np.searchsorted(self.edges, r, side="right") - 1
        sector = np.floor(np.mod(np.angle(q) + self.dphi / 2, TWO_PI) / self.dphi).astype(np.int64)
        sector = np.minimum(sector, self.n_phases - 1)
        idx = 1 + ring * self.n_phases + sector
        idx = np.where(ring < 0, 0, idx)
        return np.where(ring >= self.n_rings, self.n_outputs - 1, idx)

    def scaled(self, lam):
        return RingGrid(self.radii * lam, self.edges * lam, self.n_phases, self.spacing)

    def key(self):
        return (self.radii.tobytes(), self.edges.tobytes(), self.n_phases)


def build_grid(n_rings, n_phases, r_max, spacing="uniform", r_min=0.0):
    """Ring grid with ``n_rings`` amplitudes up to ``r_max``.

    Parameters
    ----------
    spacing : {"uniform", "sqrt-uniform"}
        ``uniform`` puts ``r_n = r_min + n (r_max - r_min)/N``; ``sqrt-uniform``
        does the same in ``r^2``, i.e. equal power steps.  Bin edges are the
        midpoints (in ``r`` or ``r^2`` respectively), extended by half a step
        at both ends.
    r_min : float
        Amplitude below the first ring.  Outputs inside the first edge fall in
        the origin disk.
    """
    if n_rings < 1 or n_phases < 1:
        raise ValueError("grid needs at least one ring and one phase")
    if not (r_max > r_min >= 0):
        raise ValueError("need r_max > r_min >= 0")
    half = np.arange(n_rings + 1) + 0.5   # edges sit at half steps
    if spacing == "uniform":
        step = (r_max - r_min) / n_rings
        radii = r_min + step * np.arange(1, n_rings + 1)
        edges = r_min + step * half
    elif spacing == "sqrt-uniform":
        step = (r_max**2 - r_min**2) / n_rings
        radii = np.sqrt(r_min**2 + step * np.arange(1, n_rings + 1))
        edges = np.sqrt(r_min**2 + step * half)
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    return RingGrid(radii, edges, int(n_phases), spacing)


@dataclass(eq=False)
class TransitionMatrix:
    """Row-stochastic channel matrix with input metadata.

    ``probs[i, j]`` is P(output j | input i).  ``orbits`` (optional) marks
    outputs that are images of each other under the channel's rotation; when
    present, information measures treat the phase input as uniform.
    """

    probs: np.ndarray
    input_radii: np.ndarray
    input_phases: np.ndarray = None
    orbits: np.ndarray = None
    deficit: float = 0.0            # largest pre-normalisation row deficit
    clamped_mass: float = 0.0       # largest clamped negative mass in a row

    def __post_init__(self):
        self.probs = np.asarray(self.probs, float)
        self.input_radii = np.asarray(self.input_radii, float)
        if self.input_phases is None:
            self.input_phases = np.zeros_like(self.input_radii)
        if self.probs.shape[0] != self.input_radii.size:
            raise ValueError("one input radius per row required")

    @property
    def shape(self):
        return self.probs.shape

    @property
    def powers(self):
        return self.input_radii**2

    def subset(self, rows):
        rows = np.asarray(rows)
        return TransitionMatrix(self.probs[rows], self.input_radii[rows],
                                self.input_phases[rows], self.orbits,
                                self.deficit, self.clamped_mass)


@dataclass
class InputDistribution:
    """Amplitude mass points with uniform phase."""

    radii: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.radii = np.asarray(self.radii, float)
        self.probs = np.asarray(self.probs, float)
        if self.radii.shape != self.probs.shape:
            raise ValueError("radii and probs must have equal length")
        if np.any(self.probs < -1e-15) or abs(self.probs.sum() - 1) > 1e-9:
            raise ValueError("probs must be a probability vector")

    @property
    def power(self):
        return float(np.dot(self.probs, self.radii**2))

    def support(self, threshold=1e-6):
        keep = self.probs > threshold
        return InputDistribution(self.radii[keep], self.probs[keep] / self.probs[keep].sum())

    def __len__(self):
        return self.radii.size


# --------------------------------------------------------------------------
# closed-form construction

def _gl_nodes(lo, hi, n_quad):
    x, w = np.polynomial.legendre.leggauss(n_quad)
    mid, half = (hi + lo) / 2, (hi - lo) / 2
    return mid[:, None] + half[:, None] * x, half[:, None] * w


def _radial_nodes(grid, n_quad):
    """Gauss-Legendre nodes for origin disk + each annulus: shape (N+1, Q)."""
    lo = np.concatenate([[0.0], grid.edges[:-1]])
    hi = grid.edges
    return _gl_nodes(lo, hi, n_quad)


def _overflow_mass(r_out, r0, noise_power):
    # P(R > r_out) for the Rician law, via the noncentral chi-square tail
    return stats.ncx2.sf(2 * r_out**2 / noise_power, 2, 2 * np.asarray(r0) ** 2 / noise_power)


def _fold_sectors(coef, n_phases):
    """Sector masses (relative to ring mass) from phase Fourier coefficients.

    ``coef[..., m-1]`` is the m-th coefficient already multiplied by the
    sector-averaging factor.  Orders are folded modulo M and summed by FFT.
    """
    k = coef.shape[-1]
    lead = coef.shape[:-1]
    folded = np.zeros(lead + (n_phases,), dtype=complex)
    m = np.arange(1, k + 1)
    for start in range(0, k, n_phases):
        chunk = coef[..., start:start + n_phases]
        idx = m[start:start + n_phases] % n_phases
        # indices within one chunk are distinct, so += does not drop terms
        folded[..., idx] += chunk
    series = 1 + 2 * np.real(np.fft.ifft(folded, axis=-1) * n_phases)
    return series / n_phases


def channel_rows(grid, params, r0, phi0=0.0, n_quad=DEFAULT_QUAD, tol=1e-12):
    """Output-bin probabilities for arbitrary inputs ``r0 * exp(j phi0)``.

    Ring masses come from Gauss-Legendre integration of the amplitude law over
    each annulus.  Within an annulus the phase law is the mass-weighted
    average of the conditional phase characteristic over the same nodes,
    integrated exactly over each sector.  Small negative sector values from
    series truncation are clamped to 0 and the annulus renormalised.

    Returns
    -------
    probs : ndarray, shape (len(r0), grid.n_outputs)
    deficit : float
        Largest ``|1 - row sum|`` before normalisation.
    clamped : float
        Largest clamped mass in a row.
    """
    r0 = np.atleast_1d(np.asarray(r0, float))
    phi0 = np.array(np.broadcast_to(np.asarray(phi0, float), r0.shape))
    n = params.noise_power
    nodes, weights = _radial_nodes(grid, n_quad)          # (N+1, Q)
    big_n, big_m = grid.n_rings, grid.n_phases
    out = np.zeros((r0.size, grid.n_outputs))
    deficit = 0.0
    clamped = 0.0
    uniq, inverse = np.unique(r0, return_inverse=True)
    for u, a in enumerate(uniq):
        rows = np.nonzero(inverse == u)[0]
        dens = np.exp(log_amplitude_pdf(nodes, a, params)) * weights
        ring_mass = dens.sum(axis=1)                       # (N+1,)
        over = float(_overflow_mass(grid.edges[-1], a, n))
        mass = ring_mass[1:]
        live = mass > 1e-300
        rho_bar = None
        if a > 0 and big_m > 1 and np.any(live):
            rho, _ = phase_coefficients(nodes[1:][live], a, params, tol)
            if rho.shape[-1]:
                w = dens[1:][live] / mass[live][:, None]
                rho_bar = np.einsum("nq,nqk->nk", w, rho)
        for i in rows:
            sectors = np.full((big_n, big_m), 1.0 / big_m)
            if rho_bar is not None:
                mm = np.arange(1, rho_bar.shape[-1] + 1)
                coef = rho_bar * np.sinc(mm / big_m) * np.exp(-1j * mm * phi0[i])
                prof = _fold_sectors(coef, big_m)
                neg = prof < 0
                if np.any(neg):
                    lost = -np.where(neg, prof, 0).sum(1) * mass[live]
                    clamped = max(clamped, float(lost.max()))
                    prof = np.where(neg, 0.0, prof)
                    prof /= prof.sum(axis=1, keepdims=True)
                sectors[live] = prof
            out[i, 0] = ring_mass[0]
            out[i, -1] = over
            out[i, 1:-1] = (mass[:, None] * sectors).ravel()
            total = out[i].sum()
            deficit = max(deficit, abs(1 - total))
            out[i] /= total
    return out, deficit, clamped


def transition_closed_form(grid, params, include_zero=True, n_quad=DEFAULT_QUAD, tol=1e-12):
    """Channel matrix from the closed-form conditional law.

    Rows are the inputs ``{0} U grid.radii`` (or just the radii) at phase 0.
    Entries are per-bin integrals of the conditional density (Gauss-Legendre
    in ``r``, exact in ``phi``), not midpoint samples.
    """
    radii = np.concatenate([[0.0], grid.radii]) if include_zero else grid.radii.copy()
    probs, deficit, clamped = channel_rows(grid, params, radii, 0.0, n_quad, tol)
    if clamped > 1e-4:
        warnings.warn(f"clamped mass {clamped:.2e} exceeds 1e-4 in some row",
                      RuntimeWarning, stacklevel=2)
    return TransitionMatrix(probs, radii, None, grid.orbits(), deficit, clamped)


def rotate_row(row, grid, k):
    """Row for an input rotated by ``k`` sectors."""
    out = row.copy()
    rings = row[1:-1].reshape(grid.n_rings, grid.n_phases)
    out[1:-1] = np.roll(rings, k, axis=1).ravel()
    return out


def amplitude_rows(grid, params, r0, n_quad=DEFAULT_QUAD):
    """Amplitude-only output probabilities (origin disk, annuli, overflow)
    for inputs of amplitude ``r0``.

    Returns
    -------
    probs : ndarray, shape (len(r0), grid.n_rings + 2)
    deficit : float
        Largest ``|1 - row sum|`` before normalisation.
    """
    r0 = np.atleast_1d(np.asarray(r0, float))
    nodes, weights = _radial_nodes(grid, n_quad)
    probs = np.empty((r0.size, grid.n_rings + 2))
    for i, a in enumerate(r0):
        probs[i, :-1] = (np.exp(log_amplitude_pdf(nodes, a, params)) * weights).sum(1)
        probs[i, -1] = _overflow_mass(grid.edges[-1], a, params.noise_power)
    deficit = float(np.max(np.abs(1 - probs.sum(1))))
    return probs / probs.sum(1, keepdims=True), deficit


def amplitude_transition(grid, params, include_zero=True, n_quad=DEFAULT_QUAD):
    """Amplitude-only channel: inputs ``{0} U radii``, outputs origin disk,
    annuli and overflow.  Independent of ``gamma``."""
    radii = np.concatenate([[0.0], grid.radii]) if include_zero else grid.radii.copy()
    probs, deficit = amplitude_rows(grid, params, radii, n_quad)
    return TransitionMatrix(probs, radii, None, None, deficit)


def ring_marginal(t, grid):
    """Collapse a joint matrix to (origin, annuli, overflow) columns."""
    p = t.probs
    rings = p[:, 1:-1].reshape(p.shape[0], grid.n_rings, grid.n_phases).sum(-1)
    return TransitionMatrix(np.column_stack([p[:, 0], rings, p[:, -1]]),
                            t.input_radii, t.input_phases, None, t.deficit)


# --------------------------------------------------------------------------
# propagator construction

def _fine_cells(grid, refine, margin):
    """Sub-divide every annulus into ``refine`` cells and extend past the grid."""
    lo = np.concatenate([[0.0], grid.edges[:-1]])
    hi = grid.edges
    cells = [np.linspace(a, b, refine + 1)[:-1] for a, b in zip(lo, hi)]
    left = np.concatenate(cells)
    owner = np.repeat(np.arange(grid.n_rings + 1), refine)   # 0 = origin disk
    step = (hi[-1] - lo[-1]) / refine
    n_extra = int(math.ceil(margin / step))
    left = np.concatenate([left, hi[-1] + step * np.arange(n_extra)])
    owner = np.concatenate([owner, np.full(n_extra, grid.n_rings + 1)])
    right = np.concatenate([left[1:], [hi[-1] + step * n_extra]])
    return left, right, owner


def transition_propagator(grid, params, n_steps, refine=3, margin_sigmas=4.0,
                          tol=1e-10, include_zero=True, scheme="exponential"):
    """Channel matrix from repeated application of the one-step channel.

    One step of length ``eps = L / n_steps`` maps ``q`` to a Gaussian
    ``CN(mean, sigma2 eps)`` with ``mean = q exp(j eps gamma |q|^2)``
    (``scheme="exponential"``) or ``mean = q + j eps gamma |q|^2 q``
    (``scheme="euler"``).  The Euler mean inflates the amplitude by a factor
    ``(1 + (eps gamma |q|^2)^2)^(1/2)`` per step, a bias of roughly
    ``phi_NL^2 / (2 n)`` after ``n`` steps.  The resulting
    Markov kernel on the polar grid commutes with rotations, so a DFT over
    the phase index splits it into one radial matrix per phase harmonic
    ``mu``:

        K_mu[i, k] = K_0[i, k] * I_mu(x_ik) / I_0(x_ik) * exp(-j mu theta_i),

    where ``K_0`` is the radial (Rician) step kernel sampled on a refined
    radial grid and row-normalised, ``x_ik = 2 r_k s_i / (sigma2 eps)`` and
    ``s_i exp(j theta_i)`` is the deterministic image of radius ``r_i``.
    Each ``K_mu`` is raised to the ``n_steps`` power, applied to the input
    indicator, and the harmonics are folded back into sector masses.
    Mass that leaves the refined grid goes to an absorbing overflow state.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if scheme not in ("euler", "exponential"):
        raise ValueError(f"unknown scheme {scheme!r}")
    eps = params.length / n_steps
    v = params.sigma2 * eps
    left, right, owner = _fine_cells(grid, refine, margin_sigmas * math.sqrt(params.noise_power))
    centre = (left + right) / 2
    width = right - left
    nf = centre.size
    step_std = math.sqrt(v / 2)
    if step_std < np.max(width[owner <= grid.n_rings]):
        warnings.warn("one-step noise narrower than a radial cell; propagator will be inaccurate",
                      RuntimeWarning, stacklevel=2)

    ge = params.gamma * eps * centre**2
    if scheme == "euler":
        s = centre * np.sqrt(1 + ge**2)
        theta = np.arctan(ge)
    else:
        s = centre
        theta = ge
    x = 2 * np.outer(s, centre) / v
    with np.errstate(divide="ignore"):
        log_k0 = (np.log(2 * centre * width / v)[None, :]
                  - (centre[None, :] - s[:, None]) ** 2 / v
                  + np.log(sps.ive(0, x)))
    k0 = np.exp(log_k0 - log_k0.max(axis=1, keepdims=True))
    k0 /= k0.sum(axis=1, keepdims=True)
    leak = stats.ncx2.sf(2 * right[-1] ** 2 / v, 2, 2 * s**2 / v)
    k0 *= (1 - leak)[:, None]

    radii = np.concatenate([[0.0], grid.radii]) if include_zero else grid.radii.copy()
    start = np.searchsorted(right, radii, side="right")
    start = np.minimum(start, nf - 1)

    def propagate(mu):
        # absorbing state appended as the last index; harmonics mu >= 1 carry
        # no mass there
        km = np.zeros((mu.size, nf + 1, nf + 1), dtype=complex)
        ratio = sps.ive(mu[:, None, None], x[None]) / sps.ive(0, x)[None]
        km[:, :nf, :nf] = k0[None] * ratio * np.exp(-1j * mu[:, None, None] * theta[None, :, None])
        km[mu == 0, :nf, nf] = leak
        km[mu == 0, nf, nf] = 1.0
        power = np.linalg.matrix_power(km, n_steps)
        return power[:, start, :]                 # (n_mu, n_in, nf+1)

    # harmonic 0: radial masses
    v0 = propagate(np.array([0]))[0].real
    if np.max(v0[:, nf]) > 1e-3:
        warnings.warn("more than 1e-3 of the mass left the refined grid",
                      RuntimeWarning, stacklevel=2)
    n_owner = grid.n_rings + 2
    agg = np.zeros((nf + 1, n_owner))
    agg[np.arange(nf), owner] = 1.0
    agg[nf, grid.n_rings + 1] = 1.0
    ring_mass = v0 @ agg                       # (n_in, N+2): origin, rings, overflow

    big_m = grid.n_phases
    coefs = []
    mu0 = 1
    block = 16
    while big_m > 1 and mu0 < 4096:
        mu = np.arange(mu0, mu0 + block)
        vm = propagate(mu)                      # (block, n_in, nf+1)
        ring_h = np.einsum("bif,fo->bio", vm, agg)[..., 1:grid.n_rings + 1]
        coefs.append(np.moveaxis(ring_h, 0, -1))   # (n_in, N, block)
        rel = np.abs(ring_h) / np.maximum(ring_mass[None, :, 1:grid.n_rings + 1], 1e-300)
        mu0 += block
        if np.all(rel[-3:] < tol):
            break
    probs = np.zeros((radii.size, grid.n_outputs))
    probs[:, 0] = ring_mass[:, 0]
    probs[:, -1] = ring_mass[:, -1]
    mass = ring_mass[:, 1:grid.n_rings + 1]
    if coefs:
        h = np.concatenate(coefs, axis=-1)
        mm = np.arange(1, h.shape[-1] + 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            rho = np.where(mass[..., None] > 1e-300, h / mass[..., None], 0)
        prof = _fold_sectors(rho * np.sinc(mm / big_m), big_m)
        prof = np.clip(prof, 0, None)
        prof /= prof.sum(-1, keepdims=True)
    else:
        prof = np.full(mass.shape + (big_m,), 1.0 / big_m)
    probs[:, 1:-1] = (mass[..., None] * prof).reshape(radii.size, -1)
    deficit = float(np.max(np.abs(1 - probs.sum(1))))
    probs /= probs.sum(1, keepdims=True)
    return TransitionMatrix(probs, radii, None, grid.orbits(), deficit)


# --------------------------------------------------------------------------
# serialisation

_MAGIC = b"FCDMC\x00\x01\x00"


def save_binary(t, f):
    """Write ``t`` as: 8-byte magic, uint64 n_in, uint64 n_out, float64
    probabilities row-major, float64 input radii, float64 input phases,
    int64 orbit labels (all -1 when absent).  Little-endian throughout."""
    n_in, n_out = t.probs.shape
    orbits = t.orbits if t.orbits is not None else np.full(n_out, -1)
    own = isinstance(f, (str, bytes)) or hasattr(f, "__fspath__")
    fh = open(f, "wb") if own else f
    try:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", n_in, n_out))
        fh.write(np.ascontiguousarray(t.probs, "<f8").tobytes())
        fh.write(np.ascontiguousarray(t.input_radii, "<f8").tobytes())
        fh.write(np.ascontiguousarray(t.input_phases, "<f8").tobytes())
        fh.write(np.ascontiguousarray(orbits, "<i8").tobytes())
    finally:
        if own:
            fh.close()


def load_binary(f):
    own = isinstance(f, (str, bytes)) or hasattr(f, "__fspath__")
    fh = open(f, "rb") if own else f
    try:
        data = fh.read()
    finally:
        if own:
            fh.close()
    if data[:8] != _MAGIC:
        raise ValueError("not a transition-matrix file")
    n_in, n_out = struct.unpack("<QQ", data[8:24])
    off = 24
    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(data, dtype, count, off)
        off += arr.nbytes
        return arr.copy()
    probs = take(n_in * n_out, "<f8").reshape(n_in, n_out)
    radii = take(n_in, "<f8")
    phases = take(n_in, "<f8")
    orbits = take(n_out, "<i8")
    return TransitionMatrix(probs, radii, phases, None if np.all(orbits < 0) else orbits)


def to_csv(t, f):
    """Dense CSV: one row per input, columns ``r0, phi0, p_0 .. p_{n-1}``."""
    header = "r0,phi0," + ",".join(f"p{j}" for j in range(t.probs.shape[1]))
    data = np.column_stack([t.input_radii, t.input_phases, t.probs])
    np.savetxt(f, data, delimiter=",", header=header, comments="", fmt="%.17g")
