"""Mutual information and power-constrained capacity of gridded channels.

The capacity solver is Blahut-Arimoto with the average-power constraint
enforced inside every iteration: after computing the divergences
``D_i = D(T_i || q)`` the update ``p_i <- p_i exp(D_i - lam * s_i)`` is
normalised with the multiplier ``lam >= 0`` that makes the new average cost
exactly ``P`` (or ``lam = 0`` when the untilted update already meets it).
Each iteration is then an exact alternating maximisation step, so the
mutual information never decreases.  For any ``lam >= 0``

    C <= max_i (D_i - lam * s_i) + lam * P,

and minimising the right side over ``lam`` (a two-variable LP) gives the
reported duality gap.  That gap closes slowly for symbols whose probability
is decaying to zero, so the iteration also stops once the information rate
stalls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special as sps

from . import dmc
from .dmc import InputDistribution, TransitionMatrix

TINY = 1e-300


def _symmetrise(q, orbits):
    if orbits is None:
        return q
    sums = np.bincount(orbits, weights=q)
    counts = np.bincount(orbits)
    return (sums / counts)[orbits]


def _row_entropy_terms(probs):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(probs > 0, probs * np.log(np.where(probs > 0, probs, 1.0)), 0.0).sum(1)


def _divergences(t, p, neg_h=None):
    """``D(T_i || qbar)`` for every row and the output law ``qbar``."""
    probs = t.probs
    if neg_h is None:
        neg_h = _row_entropy_terms(probs)
    q = _symmetrise(p @ probs, t.orbits)
    log_q = np.log(np.maximum(q, TINY))
    return neg_h - probs @ log_q, q


def mutual_information(t, p):
    """Mutual information in nats between the input law ``p`` and the output.

    Parameters
    ----------
    t : TransitionMatrix
        If ``t.orbits`` is set, the rows are phase-0 representatives and the
        input phase is taken uniform; the output law is averaged over each
        orbit accordingly.
    p : InputDistribution or array_like
        Probabilities over the rows of ``t``.
    """
    if isinstance(p, InputDistribution):
        p = p.probs
    p = np.asarray(p, float)
    if p.shape != (t.probs.shape[0],):
        raise ValueError(f"input law has {p.size} entries, channel has {t.probs.shape[0]} rows")
    d, _ = _divergences(t, p)
    keep = p > 0
    return float(np.dot(p[keep], d[keep]))


@dataclass
class CapacityResult:
    capacity: float
    input: InputDistribution
    multiplier: float
    iterations: int
    converged: bool
    mi_gap: float
    history: list = field(default_factory=list, repr=False)

    @property
    def upper_bound(self):
        return self.capacity + self.mi_gap

    @property
    def support_size(self):
        return int(np.count_nonzero(self.input.probs > 1e-4))


def _solve_multiplier(logits, costs, power):
    """Smallest ``lam >= 0`` with ``E_softmax(logits - lam*costs)[cost] <= power``."""
    def mean_cost(lam):
        w = logits - lam * costs
        w = np.exp(w - w.max())
        return np.dot(w, costs) / w.sum()

    if mean_cost(0.0) <= power:
        return 0.0
    if costs.min() > power:
        raise ValueError("power constraint infeasible: every symbol costs more than P")
    hi = 1.0 / max(power, TINY)
    while mean_cost(hi) > power:
        hi *= 2.0
        if hi > 1e300:
            raise RuntimeError("multiplier search diverged")
    return optimize.brentq(lambda lam: mean_cost(lam) - power, 0.0, hi,
                           xtol=1e-14 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)


def certified_gap(d, p, costs, P):
    """Smallest duality gap ``min_lam max_i(D_i - lam s_i) + lam P - I``."""
    mi = float(np.dot(p, d))
    if P is None:
        return float(d.max()) - mi, 0.0
    # variables (lam, t): minimise lam*P + t  s.t.  t >= D_i - lam s_i
    res = optimize.linprog([P, 1.0], A_ub=np.column_stack([-costs, -np.ones_like(costs)]),
                           b_ub=-d, bounds=[(0, None), (None, None)], method="highs")
    if not res.success:
        return math.inf, 0.0
    return max(res.fun - mi, 0.0), float(res.x[0])


def blahut_arimoto(t, powers=None, P=None, tol=1e-7, max_iter=20000, p0=None,
                   track=False, check_every=10, stall=1e-2, max_step=8.0):
    """Capacity of ``t`` under an average cost constraint.

    Parameters
    ----------
    t : TransitionMatrix
    powers : array_like, optional
        Cost of each row; defaults to ``t.input_radii ** 2``.
    P : float or None
        Average-cost budget.  ``None`` means unconstrained.
    tol : float
        Stop when the duality gap falls below ``tol`` nats.
    max_iter : int
    p0 : array_like, optional
        Starting law (defaults to uniform over rows).
    track : bool
        Record the mutual information of every iterate in ``history``.
    check_every : int
        Iterations between duality-gap evaluations.
    stall : float
        Also stop when the rate gained over ``check_every`` iterations is
        below ``stall * tol``.
    max_step : float
        Largest multiplier ``mu`` on the divergences in the update
        ``p_i <- p_i exp(mu D_i - lam s_i)``.  ``mu`` grows geometrically
        while the rate increases and falls back to 1 (the plain, monotone
        step) after an overshoot, whose iterate is discarded.  Pass 1 for
        the classical iteration.

    Returns
    -------
    CapacityResult
        ``capacity`` is the information rate of the final law (a lower bound
        on the true capacity); ``capacity + mi_gap`` is an upper bound.
        ``converged`` is True when the gap or the stall rule stopped the
        iteration.
    """
    probs = t.probs
    n_in = probs.shape[0]
    costs = t.powers if powers is None else np.asarray(powers, float)
    if P is not None and P <= 0:
        raise ValueError("P must be positive")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_step < 1:
        raise ValueError("max_step must be >= 1")
    p = np.full(n_in, 1.0 / n_in) if p0 is None else np.asarray(p0, float) / np.sum(p0)
    if P is not None and np.dot(p, costs) > P:
        # start from a feasible tilt of the uniform law
        lam = _solve_multiplier(np.log(np.maximum(p, TINY)), costs, P)
        w = np.log(np.maximum(p, TINY)) - lam * costs
        p = np.exp(w - w.max())
        p /= p.sum()
    neg_h = _row_entropy_terms(probs)
    history = []
    lam = 0.0
    gap = math.inf
    last_check = -math.inf
    converged = False
    step = 1.0
    prev = None
    reverted = False
    it = 0
    for it in range(1, max_iter + 1):
        d, _ = _divergences(t, p, neg_h)
        mi = float(np.dot(p, d))
        if prev is not None and mi < prev[2] - 1e-15 * abs(prev[2]):
            p, d, mi = prev
            step = 1.0
            reverted = True
        else:
            step = min(1.25 * step, max_step)
        prev = (p, d, mi)
        if track:
            history.append(mi)
        if it % check_every == 0 or it == max_iter:
            gap, lam_opt = certified_gap(d, p, costs, P)
            # a window with a discarded step says nothing about stalling
            stalled = not reverted and mi - last_check < stall * tol
            if gap < tol or stalled:
                lam = lam_opt
                converged = True
                break
            last_check = mi
            reverted = False
        logits = np.log(np.maximum(p, TINY)) + step * d
        lam = 0.0 if P is None else _solve_multiplier(logits, costs, P)
        w = logits - lam * costs
        p_new = np.exp(w - w.max())
        p = p_new / p_new.sum()
    else:
        gap, lam = certified_gap(d, p, costs, P)
    return CapacityResult(max(mi, 0.0), InputDistribution(t.input_radii, p), lam, it,
                          converged, gap, history)


_CACHE = {}
_CACHE_SIZE = 8


def cached_closed_form(grid, params):
    """Closed-form joint channel, memoised on (grid, params)."""
    key = (grid.key(), params)
    if key not in _CACHE:
        if len(_CACHE) >= _CACHE_SIZE:
            _CACHE.pop(next(iter(_CACHE)))
        _CACHE[key] = dmc.transition_closed_form(grid, params)
    return _CACHE[key]


def _peak_rows(t, peak):
    if peak is None:
        return t
    keep = np.nonzero(t.input_radii**2 <= peak * (1 + 1e-12))[0]
    return t.subset(keep)


def joint_capacity(params, grid, P, tol=1e-6, peak=None, channel=None, **kw):
    """Capacity of the gridded channel with uniform input phase.

    Rings above ``sqrt(peak)`` are removed from the alphabet.
    """
    t = channel if channel is not None else cached_closed_form(grid, params)
    return blahut_arimoto(_peak_rows(t, peak), P=P, tol=tol, **kw)


def amplitude_capacity(params, grid, P, tol=1e-6, peak=None, channel=None, **kw):
    """Capacity of the amplitude-only (intensity-detection) channel."""
    t = channel if channel is not None else dmc.amplitude_transition(grid, params)
    return blahut_arimoto(_peak_rows(t, peak), P=P, tol=tol, **kw)


def mpsk_rate(M, P, params, grid, offset=0.0):
    """Rate of equiprobable M-PSK with amplitude ``sqrt(P)``."""
    if M < 2:
        raise ValueError("M must be >= 2")
    phases = offset + 2 * math.pi * np.arange(M) / M
    probs, _, _ = dmc.channel_rows(grid, params, np.full(M, math.sqrt(P)), phases)
    t = TransitionMatrix(probs, np.full(M, math.sqrt(P)), phases)
    return mutual_information(t, np.full(M, 1.0 / M))


def phase_noise_std(P, params):
    """Rough output phase spread: linear plus nonlinear phase noise."""
    n = params.noise_power
    gl = params.gamma * params.length
    return math.sqrt(n / (2 * P) + 2.0 / 3.0 * gl * gl * P * n)


def phase_grid(P, params, n_rings=40, n_phases=None, width=8.0):
    """Annular grid around ``sqrt(P)`` for phase-information studies."""
    sd = math.sqrt(params.noise_power / 2)
    r0 = math.sqrt(P)
    lo = max(0.0, r0 - width * sd)
    if n_phases is None:
        sigma = min(phase_noise_std(P, params), math.pi)
        n_phases = int(min(4096, max(64, 2 ** math.ceil(math.log2(16 * 2 * math.pi / sigma)))))
    return dmc.build_grid(n_rings, n_phases, r0 + width * sd, r_min=lo)


def phase_rate(P, params, grid=None, n_phase_levels=None):
    """Information carried by the input phase at fixed amplitude ``sqrt(P)``.

    With ``n_phase_levels=None`` the phase is uniform over the grid's sector
    centres (the symmetric optimum, so this is the phase-channel capacity up
    to quantisation); otherwise equiprobable ``n_phase_levels``-PSK is used.
    """
    if grid is None:
        grid = phase_grid(P, params)
    if n_phase_levels is not None:
        return mpsk_rate(n_phase_levels, P, params, grid)
    probs, _, _ = dmc.channel_rows(grid, params, [math.sqrt(P)], 0.0)
    t = TransitionMatrix(probs, [math.sqrt(P)], None, grid.orbits())
    return mutual_information(t, np.ones(1))


def halfgaussian_input(grid, P, include_zero=True):
    """Half-Gaussian amplitude law (``E R0^2 = P``) binned onto the grid inputs.

    The origin point takes the mass of ``[0, edges[0])`` and ring ``n`` the
    mass of its annulus; mass beyond the grid is dropped and the rest
    renormalised.
    """
    cdf = sps.erf(np.concatenate([[0.0], grid.edges]) / math.sqrt(2 * P))
    mass = np.diff(cdf)
    radii = np.concatenate([[0.0], grid.radii])
    if not include_zero:
        mass[1] += mass[0]
        mass, radii = mass[1:], radii[1:]
    return InputDistribution(radii, mass / mass.sum())


def halfgaussian_rate(P, params, grid, channel=None):
    """Rate of the half-Gaussian amplitude profile with uniform phase."""
    t = channel if channel is not None else cached_closed_form(grid, params)
    return mutual_information(t, halfgaussian_input(grid, P))


@dataclass
class SearchResult:
    input: InputDistribution
    mi: float
    init_mi: float
    success: bool
    message: str = ""

    @property
    def support_size(self):
        return len(self.input)


def _cluster(radii, probs, threshold):
    """Group grid masses into mass points at their power-weighted radius.

    Runs of consecutive above-threshold rings are split at valleys (a ring
    lighter than half of both neighbouring peaks) and each piece becomes one
    point.
    """
    keep = probs > threshold
    points = []
    i = 0
    n = radii.size
    while i < n:
        if not keep[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and keep[j + 1]:
            j += 1
        seg = np.arange(i, j + 1)
        cuts = [i]
        for k in range(i + 1, j):
            left = probs[cuts[-1]:k].max()
            right = probs[k + 1:j + 1].max()
            if probs[k] < 0.5 * min(left, right) and probs[k] < probs[k - 1] and probs[k] <= probs[k + 1]:
                cuts.append(k)
        cuts.append(j + 1)
        for a, b in zip(cuts[:-1], cuts[1:]):
            idx = seg[(seg >= a) & (seg < b)]
            w = probs[idx]
            points.append((math.sqrt(np.dot(w, radii[idx] ** 2) / w.sum()), w.sum()))
        i = j + 1
    r = np.array([pt[0] for pt in points])
    p = np.array([pt[1] for pt in points])
    return r, p / p.sum()


def _merge_close(r, p, spacing):
    order = np.argsort(r)
    r, p = r[order], p[order]
    out_r, out_p = [r[0]], [p[0]]
    for ri, pi in zip(r[1:], p[1:]):
        if ri - out_r[-1] < 0.5 * spacing:
            tot = out_p[-1] + pi
            out_r[-1] = math.sqrt((out_p[-1] * out_r[-1] ** 2 + pi * ri**2) / tot)
            out_p[-1] = tot
        else:
            out_r.append(ri)
            out_p.append(pi)
    return np.array(out_r), np.array(out_p)


def discrete_input_search(params, grid, P, peak=None, init=None, threshold=1e-3,
                          tol=1e-6, max_iter=200, channel="amplitude", prune_tol=1e-3):
    """Finite-support input law refined from a Blahut-Arimoto solution.

    ``channel`` selects the amplitude-only (intensity detection) channel or
    the joint amplitude/phase channel with uniform input phase.  ``init``
    must come from the same channel.

    Grid masses below ``threshold`` are dropped, neighbouring rings are
    clustered into mass points, points closer than half the local ring
    spacing are merged, and locations and probabilities are then refined by
    SLSQP on the mutual information subject to ``sum p = 1``,
    ``sum p r^2 <= P`` and ``r <= sqrt(peak)``.  Finally points are removed
    one at a time (re-refining the rest) while the rate stays within
    ``prune_tol`` nats of the full solution; set ``prune_tol=0`` to keep
    every point above ``threshold``.

    Returns
    -------
    SearchResult
        ``success`` is False (and the clustered start is returned) if the
        refinement fails or ends more than 1e-3 nats below ``init``.
    """
    if channel not in ("amplitude", "joint"):
        raise ValueError(f"unknown channel {channel!r}")
    if init is None:
        solve = amplitude_capacity if channel == "amplitude" else joint_capacity
        init = solve(params, grid, P, peak=peak)
    r_max = math.sqrt(peak) if peak is not None else grid.edges[-1]
    orbits = grid.orbits() if channel == "joint" else None

    def rows_of(r):
        if channel == "joint":
            return dmc.channel_rows(grid, params, r, 0.0)[0]
        return dmc.amplitude_rows(grid, params, r)[0]

    def rate(r, p):
        rows = rows_of(r)
        return mutual_information(TransitionMatrix(rows, r, None, orbits), p), rows

    r, p = _cluster(init.input.radii, init.input.probs, threshold)
    spacing = np.diff(grid.edges)
    local = np.interp(r, grid.radii, spacing)
    r, p = _merge_close(r, p, float(np.median(local)))
    # pull the clustered law back onto the power budget
    if np.dot(p, r * r) > P:
        r = r * math.sqrt(P / np.dot(p, r * r))
    h = 1e-3 * math.sqrt(params.noise_power)
    merge_gap = float(np.median(local))

    def refine(start_r, start_p):
        k = start_r.size

        def unpack(x):
            return np.clip(x[:k], 0, r_max), np.clip(x[k:], 0, None)

        def objective(x):
            rr, pp = unpack(x)
            pp = pp / pp.sum()
            mi, rows = rate(rr, pp)
            q = _symmetrise(pp @ rows, orbits)
            with np.errstate(divide="ignore", invalid="ignore"):
                log_ratio = np.where(rows > 0, np.log(np.where(rows > 0, rows, 1)) - np.log(np.maximum(q, TINY)), 0)
            d = (rows * log_ratio).sum(1)
            up = rows_of(np.minimum(rr + h, r_max + h))
            dn = rows_of(np.maximum(rr - h, 0.0))
            width = np.minimum(rr + h, r_max + h) - np.maximum(rr - h, 0.0)
            deriv = (up - dn) / width[:, None]
            grad_r = pp * (deriv * log_ratio).sum(1)
            return -mi, -np.concatenate([grad_r, d - 1])

        cons = [{"type": "eq", "fun": lambda x: x[k:].sum() - 1, "jac": lambda x: np.r_[np.zeros(k), np.ones(k)]},
                {"type": "ineq", "fun": lambda x: P - np.dot(x[k:], x[:k] ** 2),
                 "jac": lambda x: -np.r_[2 * x[k:] * x[:k], x[:k] ** 2]}]
        bounds = [(0.0, r_max)] * k + [(0.0, 1.0)] * k
        start_mi, _ = rate(start_r, start_p)
        try:
            res = optimize.minimize(objective, np.r_[start_r, start_p], jac=True, method="SLSQP",
                                    bounds=bounds, constraints=cons,
                                    options={"maxiter": max_iter, "ftol": tol})
            rr, pp = unpack(res.x)
            pp = pp / pp.sum()
            if np.dot(pp, rr * rr) > P * (1 + 1e-9):
                rr = rr * math.sqrt(P / np.dot(pp, rr * rr))
            mi, _ = rate(rr, pp)
            ok = res.success or res.status in (8, 9)
            msg = res.message
        except (ValueError, np.linalg.LinAlgError) as exc:
            ok, msg, mi = False, str(exc), -math.inf
        if not ok or mi < start_mi:
            rr, pp, mi = start_r, start_p, start_mi
        # drop vanishing points, merge coincident ones, snap the origin
        keep = pp > threshold
        rr, pp = _merge_close(rr[keep], pp[keep] / pp[keep].sum(), merge_gap)
        rr = np.where(rr < h, 0.0, rr)
        mi, _ = rate(rr, pp)
        return rr, pp, mi, ok, str(msg)

    rr, pp, mi, ok, msg = refine(r, p)
    # smallest support that stays within prune_tol of the refined rate
    while prune_tol > 0 and rr.size > 1:
        trials = [refine(np.delete(rr, i), np.delete(pp, i) / (1 - pp[i])) for i in range(rr.size)]
        best = max(trials, key=lambda t: t[2])
        if best[2] < mi - prune_tol or best[0].size >= rr.size:
            break
        rr, pp, _, ok, msg = best
    mi, _ = rate(rr, pp)
    success = bool(ok and mi >= init.capacity - 1e-3)
    return SearchResult(InputDistribution(rr, pp), mi, init.capacity, success, msg)
