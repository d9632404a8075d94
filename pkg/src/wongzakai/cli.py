"""Command-line driver: ``wongzakai {convergence,integrator-check,ou-check,ap-check}``.

Exit codes: 0 pass, 1 check failed, 2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import math
import re
import sys

import numpy as np

from . import harness
from .errors import AccuracyError, CapabilityError, DomainError
from .fields import FIELD_KEYS, builtin_field
from .integrators import (
    INTEGRATOR_KINDS, check_order_conditions, fit_defect_scaling, make_integrator,
)
from .ou import OUParams, moment_oracle
from .rng import ZeroStream

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


class ConfigError(Exception):
    pass


_POW2 = re.compile(r"^2\^(-?\d+)$")


def _number(tok: str) -> float:
    tok = tok.strip()
    m = _POW2.match(tok)
    if m:
        return 2.0 ** int(m.group(1))
    return float(tok)


def parse_grid(text: str) -> tuple:
    """'2^-6..2^-12' -> every dyadic level in between; otherwise a comma list."""
    text = str(text).strip()
    if ".." in text:
        lo, hi = text.split("..")
        a, b = _POW2.match(lo.strip()), _POW2.match(hi.strip())
        if not (a and b):
            raise argparse.ArgumentTypeError(f"range {text!r} must look like 2^-a..2^-b")
        ea, eb = int(a.group(1)), int(b.group(1))
        step = 1 if eb >= ea else -1
        return tuple(2.0 ** e for e in range(ea, eb + step, step))
    try:
        vals = tuple(_number(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse {text!r} as a list of numbers") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def parse_float(text: str) -> float:
    try:
        return _number(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def parse_point(text: str) -> tuple:
    try:
        return tuple(float(t) for t in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a point: {text!r}") from None


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, dashes and underscores are interchangeable."""
    out = {}
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# parser

class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _common(p, *, eps, dt, samples, integrator="heun"):
    p.add_argument("--config", help="flat key=value file; command-line flags override its values")
    p.add_argument("--field", default="cosine", choices=FIELD_KEYS, help="vector field sigma")
    p.add_argument("--integrator", default=integrator, choices=INTEGRATOR_KINDS, help="one-step integrator Phi")
    p.add_argument("--eps", default=eps, type=parse_grid, help="comma list of epsilon values")
    p.add_argument("--dt", default=dt, type=parse_grid, help="time steps: 2^-a..2^-b or a comma list")
    p.add_argument("--samples", default=samples, type=int, help="Monte Carlo sample count")
    p.add_argument("--seed", default=0, type=int, help="64-bit random seed")
    p.add_argument("--p", default=2.0, type=parse_float, help="L^p exponent of the strong error")
    p.add_argument("--reference", default="auto", choices=("auto", "exact", "fine"),
                   help="reference solution; auto picks exact when the field has a closed-form flow")
    p.add_argument("--dt-ref", default=2.0 ** -18, type=parse_float, help="reference step in fine mode")
    p.add_argument("--T", default=1.0, type=parse_float, help="final time")
    p.add_argument("--x0", default=None, type=parse_point, help="initial point, comma separated (default: origin)")
    p.add_argument("--m0", default=0.0, type=parse_float, help="initial fast variable")
    p.add_argument("--chunk-size", default=250, type=int, help="samples per work unit")
    p.add_argument("--out", default="-", help="CSV output path, '-' for stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wongzakai", description=__doc__, formatter_class=_Formatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convergence", help="strong-error sweep over eps x dt with rate fits",
                       formatter_class=_Formatter)
    _common(p, eps="0.04,0.02,0.01", dt="2^-6..2^-12", samples=1000)
    p.add_argument("--mode", default="multiscale", choices=harness.MODES, help="scheme to run")
    p.set_defaults(handler=cmd_convergence)

    p = sub.add_parser("integrator-check", help="order conditions and defect scaling of every integrator",
                       formatter_class=_Formatter)
    p.add_argument("--config", help="flat key=value file; command-line flags override its values")
    p.add_argument("--field", default="cosine", choices=FIELD_KEYS, help="vector field sigma")
    p.add_argument("--points", default=32, type=int, help="random sample points on the torus")
    p.add_argument("--seed", default=0, type=int, help="seed for the sample points")
    p.add_argument("--h", default=1e-3, type=parse_float, help="finite-difference step in t")
    p.add_argument("--tol", default=1e-4, type=parse_float, help="residual tolerance of the identities")
    p.set_defaults(handler=cmd_integrator_check)

    p = sub.add_parser("ou-check", help="closed-form OU coupling moments against Monte Carlo",
                       formatter_class=_Formatter)
    p.add_argument("--config", help="flat key=value file; command-line flags override its values")
    p.add_argument("--eps", default="0.03,0.1,0.3", type=parse_grid, help="comma list of epsilon values")
    p.add_argument("--dt", default="2^-6,2^-10", type=parse_grid, help="time steps: 2^-a..2^-b or a comma list")
    p.add_argument("--samples", default=20000, type=int, help="Monte Carlo sample count")
    p.add_argument("--seed", default=0, type=int, help="64-bit random seed")
    p.add_argument("--T", default=1.0, type=parse_float, help="final time")
    p.add_argument("--m0", default=0.0, type=parse_float, help="initial fast variable")
    p.add_argument("--threshold", default=4.0, type=parse_float, help="largest allowed |standardized deviation|")
    p.add_argument("--perturb", default=1.0, type=parse_float,
                   help="multiply the oracle's step covariance by this factor (sensitivity check)")
    p.add_argument("--zero-noise", action="store_true", default=False,
                   help="drive with zero noise and compare the deterministic decay")
    p.add_argument("--chunk-size", default=500, type=int, help="samples per work unit")
    p.set_defaults(handler=cmd_ou_check)

    p = sub.add_parser("ap-check", help="both iterated limits eps -> 0 and dt -> 0",
                       formatter_class=_Formatter)
    _common(p, eps="0.1,0.01,0.001", dt="2^-6..2^-12", samples=1000)
    p.set_defaults(handler=cmd_ap_check)
    return parser


def _apply_config_file(parser, argv):
    """Parse once to find --config, then re-parse with file values as defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    values = read_config_file(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, text in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = _bool(text)
        elif action.type is not None:
            try:
                defaults[key] = action.type(text)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
        else:
            defaults[key] = text
        if action.choices is not None and defaults[key] not in action.choices:
            raise ConfigError(f"config key {key!r}: {text!r} not in {sorted(action.choices)}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _experiment(args, mode: str) -> harness.ExperimentConfig:
    geom = harness.ExperimentConfig(field=args.field).geometry()
    x0 = args.x0 if args.x0 is not None else (0.0,) * geom.dim
    reference = args.reference
    if reference == "auto":
        reference = "exact" if builtin_field(args.field, geom).exact_flow is not None else "fine"
    cfg = harness.ExperimentConfig(
        field=args.field, integrator=args.integrator, mode=mode, T=args.T,
        dt_list=args.dt, eps_list=args.eps, samples=args.samples, p=args.p,
        reference=reference, dt_ref=args.dt_ref, seed=args.seed, x0=x0, m0=args.m0,
        chunk_size=args.chunk_size, workers=harness.default_workers(),
    )
    return cfg.validate()


def _write_csv(text: str, out: str):
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def cmd_convergence(args) -> int:
    cfg = _experiment(args, args.mode)
    result = harness.run_convergence_study(cfg)
    if not all(math.isfinite(r.error) for r in result.table.rows):
        raise AccuracyError("non-finite strong error estimate")
    _write_csv(result.table.to_csv(), args.out)
    report = sys.stderr if args.out == "-" else sys.stdout
    print(result.summary(), file=report)
    return EXIT_OK


def cmd_integrator_check(args) -> int:
    field = builtin_field(args.field)
    rng = np.random.default_rng(args.seed)
    points = rng.uniform(0.0, field.geom.period, size=(args.points, field.dim))
    nonconstant = args.field != "constant"
    failed = False
    print(f"field {args.field}: {args.points} points, h={args.h:g}, tol={args.tol:g}")
    print(f"{'integrator':<10} {'dt':>10} {'dt2':>10} {'dtdx':>10}   {'p1':>6} {'p2':>6} {'total':>6}  verdict")
    for kind in INTEGRATOR_KINDS:
        try:
            intg = make_integrator(kind, field)
        except CapabilityError as exc:
            print(f"{kind:<10} unavailable ({exc})")
            continue
        orders = check_order_conditions(intg, points, h=args.h, tol=args.tol)
        scaling = fit_defect_scaling(intg, points)
        res = orders.residuals
        if scaling.status == "ok":
            fit = f"{scaling.p1:6.2f} {scaling.p2:6.2f} {scaling.total:6.2f}"
        else:
            fit = f"{scaling.status:>20}"
        if intg.is_second_order:
            ok = orders.all_passed and scaling.passed
            verdict = "pass" if ok else "FAIL"
        else:
            # first-order member: on a non-constant field it must miss the second-derivative identity
            unexpected = nonconstant and orders.passed["dt2"]
            ok = scaling.passed and not unexpected
            verdict = ("fails dt2 (expected)" if not orders.passed["dt2"] else "pass") if ok else "FAIL"
        failed |= not ok
        print(f"{kind:<10} {res['dt']:10.2e} {res['dt2']:10.2e} {res['dtdx']:10.2e}   {fit}  {verdict}")
    return EXIT_FAILED if failed else EXIT_OK


def _zero_noise_check(args) -> int:
    m0 = args.m0 if args.m0 != 0 else 1.0
    worst = 0.0
    for p in harness.ou_moment_check(args.eps, args.dt, 1, T=args.T, m0=m0, stream=ZeroStream()):
        z = p.dt / p.epsilon ** 2
        want_exact = m0 * math.exp(-p.n * z)
        want_disc = m0 * (1.0 + z) ** -p.n
        rec = moment_oracle(OUParams(p.epsilon, m0), p.dt, p.n)
        for got, want, oracle in ((p.estimate[0], want_disc, rec.mean_disc), (p.estimate[1], want_exact, rec.mean_exact)):
            scale = max(abs(want), 1e-300)
            worst = max(worst, abs(got - want) / scale, abs(oracle - want) / scale)
    ok = worst < 1e-10
    print(f"zero noise, m0={m0:g}: max relative deviation from the decay laws {worst:.3e}  {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_ou_check(args) -> int:
    if args.zero_noise:
        return _zero_noise_check(args)
    if args.samples < 2:
        raise DomainError("need at least 2 samples")
    points = harness.ou_moment_check(
        args.eps, args.dt, args.samples, seed=args.seed, T=args.T, m0=args.m0,
        cov_scale=args.perturb, chunk_size=args.chunk_size, workers=harness.default_workers(),
    )
    names = harness.OU_QUANTITIES
    print(f"{'eps':>6} {'dt':>10} {'n':>6}  " + " ".join(f"{q:>12}" for q in names))
    worst = 0.0
    for pt in points:
        z = pt.z_scores
        worst = max(worst, float(np.max(np.abs(z))))
        print(f"{pt.epsilon:>6g} {pt.dt:>10.4g} {pt.n:>6d}  " + " ".join(f"{v:>12.2f}" for v in z))
    ok = worst <= args.threshold
    print(f"max |standardized deviation| = {worst:.3f} (threshold {args.threshold:g})  {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_ap_check(args) -> int:
    cfg = _experiment(args, "multiscale")
    report = harness.ap_check(cfg, args.eps, args.dt)
    print(report.format())
    if args.out != "-":
        rows = harness.ErrorTable()
        for (eps, dt), (err, se) in report.scheme_error.items():
            rows.add(harness.ErrorRow(eps, dt, cfg.p, err, se, cfg.samples, cfg.integrator, cfg.field, cfg.reference))
        for dt, (err, se) in report.limit_error.items():
            rows.add(harness.ErrorRow(0.0, dt, cfg.p, err, se, cfg.samples, cfg.integrator, cfg.field, cfg.reference))
        _write_csv(rows.to_csv(), args.out)
    return EXIT_OK if report.passed else EXIT_FAILED


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        return args.handler(args)
    except (ConfigError, DomainError, CapabilityError, LookupError) as exc:
        print(f"wongzakai: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AccuracyError, FloatingPointError, ArithmeticError) as exc:
        print(f"wongzakai: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SystemExit as exc:
        # argparse signals bad usage with status 2; --help exits 0
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
