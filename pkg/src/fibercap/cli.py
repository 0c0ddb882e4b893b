"""Command-line front end.

Subcommands: ``pdf``, ``sample``, ``capacity``, ``validate`` and ``report``.
Numeric output goes to CSV (or JSON) with a JSON sidecar holding the
resolved configuration.  Floats are written with ``repr`` precision
(``%.17g``), so a given configuration and seed reproduce byte-identical
files.

Exit codes: 0 success, 1 validation failure, 2 invalid arguments.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, bounds, capacity, channel, dmc, presets, samplers, special

CSV_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

COLUMNS = {
    "pdf": ["r", "phi", "density"],
    "sample": ["r", "phi"],
    "capacity": ["P_W", "noise_power_W", "snr_db", "capacity_nats", "capacity_bits",
                 "multiplier", "support_size", "halfgaussian_nats", "lb_theorem1",
                 "lb_medium", "lb_high", "region"],
}


class UsageError(Exception):
    pass


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_table(path, kind, rows, fmt="csv"):
    """Write ``rows`` (sequence of sequences in ``COLUMNS[kind]`` order)."""
    cols = COLUMNS[kind]
    path = Path(path)
    if fmt == "json":
        data = {"schema": f"fibercap-{kind}/{CSV_VERSION}", "columns": cols,
                "rows": [[_json_value(v) for v in row] for row in rows]}
        path.write_text(json.dumps(data, indent=1) + "\n")
        return path
    with path.open("w", newline="") as fh:
        fh.write(f"# fibercap-csv v{CSV_VERSION} {kind}: {','.join(cols)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_table(path):
    """Read a file written by :func:`write_table` into a list of dicts."""
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return [dict(zip(data["columns"], row)) for row in data["rows"]]
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _json_value(v):
    if isinstance(v, str):
        return v
    v = float(v)
    return v if math.isfinite(v) else None


def write_sidecar(path, payload):
    side = Path(path).with_suffix(".json")
    if side == Path(path):
        side = Path(str(path) + ".meta.json")
    side.write_text(json.dumps(payload, indent=1, sort_keys=True, default=_json_default) + "\n")
    return side


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------- arguments

def _grid_arg(text):
    try:
        n, m = text.lower().split("x")
        n, m = int(n), int(m)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 50x64, got {text!r}") from None
    if n < 1 or m < 1:
        raise argparse.ArgumentTypeError("grid sizes must be positive")
    return n, m


def _sweep_arg(text):
    try:
        lo, hi, n = text.split(":")
        return presets.SweepSpec(float(lo), float(hi), int(n))
    except ValueError:
        raise argparse.ArgumentTypeError(f"sweep must be LO_DB:HI_DB:N, got {text!r}") from None


def _common(p):
    p.add_argument("--preset", default="desk", choices=sorted(presets.PRESETS))
    p.add_argument("--gamma", type=float, help="nonlinearity, 1/(W km)")
    p.add_argument("--sigma2", type=float, help="noise density, W/km")
    p.add_argument("--length", type=float, help="fibre length, km")
    p.add_argument("--grid", type=_grid_arg, help="rings x phases, e.g. 50x64")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output file")
    p.add_argument("--format", choices=["csv", "json"], default="csv")


def build_parser():
    ap = argparse.ArgumentParser(prog="fibercap", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pdf", help="conditional PDF on the output grid")
    _common(p)
    p.add_argument("--r0", type=float, help="input amplitude (default: sqrt of preset power)")
    p.add_argument("--phi0", type=float, default=0.0)

    p = sub.add_parser("sample", help="draw channel outputs from a sampler")
    _common(p)
    p.add_argument("--oracle", choices=["split-step", "exact-path", "algebraic"], default="split-step")
    p.add_argument("--batch", type=int, default=10000)
    p.add_argument("--n-steps", type=int, default=2000)
    p.add_argument("--r0", type=float)
    p.add_argument("--phi0", type=float, default=0.0)

    p = sub.add_parser("capacity", help="capacity and bounds over a power sweep")
    _common(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--power", type=float, help="single average power, W")
    g.add_argument("--sweep", type=_sweep_arg, help="LO_DB:HI_DB:N in SNR dB")
    p.add_argument("--peak", type=float, help="peak power, W (default: preset)")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("validate", help="oracle agreement suite")
    _common(p)
    p.add_argument("--batch", type=int, default=100000)
    p.add_argument("--perturb-gamma", type=float, default=1.0,
                   help="multiply gamma in the closed form only (fault injection)")

    p = sub.add_parser("report", help="PNG figures next to a CSV produced by another command")
    p.add_argument("csv", help="file written by `capacity`, `pdf` or `sample`")
    return ap


def resolve_preset(args):
    pre = presets.get_preset(args.preset)
    try:
        return pre.with_overrides(args.gamma, args.sigma2, args.length, args.grid, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _input_amplitude(args, pre):
    if args.r0 is not None:
        if args.r0 < 0:
            raise UsageError("--r0 must be non-negative")
        return args.r0
    return math.sqrt(pre.power or 0.0)


# ---------------------------------------------------------------- commands

def cmd_pdf(args):
    pre = resolve_preset(args)
    grid = pre.grid.build()
    r0 = _input_amplitude(args, pre)
    rr, pp = np.meshgrid(grid.radii, grid.phase_centres, indexing="ij")
    dens, info = channel.conditional_pdf(rr, pp, r0, args.phi0, pre.params, full_output=True)
    _, deficit, clamped = dmc.channel_rows(grid, pre.params, [r0], args.phi0)
    rows = zip(rr.ravel(), pp.ravel(), dens.ravel())
    out = write_table(args.out, "pdf", rows, args.format)
    write_sidecar(out, {
        "command": "pdf", "version": __version__, "preset": pre.to_dict(),
        "r0": r0, "phi0": args.phi0,
        "normalization_deficit": float(np.max(deficit)), "clamped_mass": float(np.max(clamped)),
        "series_terms": int(info.n_terms), "series_converged": bool(info.converged),
    })
    return EXIT_OK


def cmd_sample(args):
    pre = resolve_preset(args)
    r0 = _input_amplitude(args, pre)
    if args.batch < 1 or args.n_steps < 1:
        raise UsageError("--batch and --n-steps must be positive")
    q0 = r0 * complex(math.cos(args.phi0), math.sin(args.phi0))
    cfg = samplers.SimConfig(args.n_steps, pre.seed, args.batch)
    if args.oracle == "split-step":
        q = samplers.split_step_sample(q0, pre.params, cfg, scheme="exponential")
        r, phi = np.abs(q), np.mod(np.angle(q), 2 * math.pi)
    elif args.oracle == "exact-path":
        q = samplers.exact_path_sample(q0, pre.params, cfg)
        r, phi = np.abs(q), np.mod(np.angle(q), 2 * math.pi)
    else:
        s = samplers.algebraic_sample(r0, args.phi0, pre.params, seed=pre.seed, batch=args.batch)
        r, phi = np.sqrt(s.r_sq), s.phi
    out = write_table(args.out, "sample", zip(r, phi), args.format)
    write_sidecar(out, {"command": "sample", "version": __version__, "preset": pre.to_dict(),
                        "oracle": args.oracle, "r0": r0, "phi0": args.phi0,
                        "batch": args.batch, "n_steps": args.n_steps, "seed": pre.seed})
    return EXIT_OK


def _capacity_point(pre, grid, power, peak, tol):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        t = capacity.cached_closed_form(grid, pre.params)
        res = capacity.joint_capacity(pre.params, grid, power, tol=tol, peak=peak, channel=t)
        hg = capacity.halfgaussian_rate(power, pre.params, grid, channel=t)
        b = bounds.bounds_table([power], pre.params)[0]
    n = pre.params.noise_power
    return [power, n, 10 * math.log10(power / n), res.capacity, res.capacity * math.log2(math.e),
            res.multiplier, res.support_size, hg, b["lb_theorem1"], b["lb_medium"], b["lb_high"],
            b["region"]]


def cmd_capacity(args):
    pre = resolve_preset(args)
    grid = pre.grid.build()
    n = pre.params.noise_power
    if args.power is not None:
        if args.power <= 0:
            raise UsageError("--power must be positive")
        powers = np.array([args.power])
    else:
        powers = (args.sweep or pre.sweep).powers(n)
    peak = args.peak if args.peak is not None else pre.peak
    if peak is not None and grid.edges[-1] ** 2 < peak:
        warnings.warn("grid does not reach the peak amplitude", RuntimeWarning, stacklevel=2)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            rows = list(ex.map(_capacity_point, [pre] * len(powers), [grid] * len(powers),
                               powers, [peak] * len(powers), [args.tol] * len(powers)))
    else:
        rows = [_capacity_point(pre, grid, P, peak, args.tol) for P in powers]
    out = write_table(args.out, "capacity", rows, args.format)
    write_sidecar(out, {"command": "capacity", "version": __version__, "preset": pre.to_dict(),
                        "peak": peak, "tol": args.tol,
                        "regimes": [bounds.regime_classify(P, pre.params).to_dict() for P in powers]})
    return EXIT_OK


# ---------------------------------------------------------------- validation

def _check(name, value, threshold, passed=None):
    if passed is None:
        passed = bool(value < threshold)
    return {"name": name, "value": float(value), "threshold": float(threshold), "passed": passed}


def _pdf_vs_mc(pre, batch, perturb):
    """Total variation between closed-form cell masses and exact-path samples.

    The threshold is 0.01 plus twice the expected total variation of a
    multinomial sample of this size under the closed form.
    """
    grid = dmc.build_grid(16, 32, pre.grid.r_max)
    r0 = math.sqrt(pre.power or pre.params.noise_power)
    p_used = channel.FiberParams(pre.params.gamma * perturb, pre.params.sigma2, pre.params.length)
    probs, _, _ = dmc.channel_rows(grid, p_used, [r0], 0.0)
    probs = probs[0]
    q = samplers.exact_path_sample(r0, pre.params, samplers.SimConfig(500, pre.seed, batch))
    idx = grid.bin_of(q)
    emp = np.bincount(idx, minlength=grid.n_outputs) / batch
    tv = 0.5 * np.abs(emp - probs).sum()
    null = 0.5 * np.sum(np.sqrt(2 * probs * (1 - probs) / (math.pi * batch)))
    return _check("pdf_vs_montecarlo_tv", tv, 0.01 + 2 * null)


def _amplitude_vs_pde(pre):
    r0 = math.sqrt(pre.power or pre.params.noise_power)
    fp = samplers.fokker_planck_amplitude(r0, pre.params, n_r=1000, n_z=200)
    ref = channel.amplitude_pdf(fp.r, r0, pre.params)
    err = np.max(np.abs(fp.density - ref)) / ref.max()
    return _check("amplitude_pdf_vs_pde_supnorm", err, 0.01)


def _identities(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        m = int(rng.integers(0, 6))
        lhs, rhs = special.verify_identity_phase(m, rng.uniform(0.1, 20), rng.uniform(-math.pi, math.pi))
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
        a = rng.uniform(0.2, 3.0)
        lhs, rhs = special.verify_identity_product(m, a, rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0))
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    return _check("identities_max_relerr", worst, 1e-8)


def _scaling(pre):
    lam = 3.0
    grid = dmc.build_grid(12, 16, pre.grid.r_max)
    P = pre.power or pre.params.noise_power
    base = capacity.joint_capacity(pre.params, grid, P, tol=1e-9, channel=dmc.transition_closed_form(grid, pre.params))
    sp = pre.params.scaled(lam)
    sg = grid.scaled(lam)
    scaled = capacity.joint_capacity(sp, sg, lam**2 * P, tol=1e-9, channel=dmc.transition_closed_form(sg, sp))
    return _check("scaling_invariance_abs", abs(base.capacity - scaled.capacity), 1e-9)


def cmd_validate(args):
    pre = resolve_preset(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        checks = [_pdf_vs_mc(pre, args.batch, args.perturb_gamma), _amplitude_vs_pde(pre),
                  _identities(pre.seed), _scaling(pre)]
    passed = all(c["passed"] for c in checks)
    report = {"schema": "fibercap-validate/1", "version": __version__, "preset": pre.to_dict(),
              "perturb_gamma": args.perturb_gamma, "checks": checks, "passed": passed}
    Path(args.out).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']:.3g} (< {c['threshold']:.3g})")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_report(args):
    from . import plots

    path = Path(args.csv)
    if not path.exists():
        raise UsageError(f"no such file: {path}")
    rows = read_table(path)
    if not rows:
        raise UsageError("empty table")
    cols = set(rows[0])
    if "capacity_nats" in cols:
        fig = plots.capacity_figure(rows, path.with_suffix(".png"))
    else:
        r = np.array([float(x["r"]) for x in rows])
        phi = np.array([float(x["phi"]) for x in rows])
        if "density" in cols:
            fig = plots.pdf_figure(r, phi, np.array([float(x["density"]) for x in rows]),
                                   path.with_suffix(".png"))
        else:
            fig = plots.sample_figure(r, phi, path.with_suffix(".png"))
    print(fig)
    return EXIT_OK


COMMANDS = {"pdf": cmd_pdf, "sample": cmd_sample, "capacity": cmd_capacity,
            "validate": cmd_validate, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, KeyError) as exc:
        print(f"fibercap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
