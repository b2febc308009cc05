"""Command-line interface: ``fbmlab <subcommand> [flags]``.

Every flag may also be given in a ``--config`` file of ``key = value`` lines
(keys are flag names without dashes, with ``-`` or ``_``); command-line flags
win. The resolved configuration is echoed as ``#`` comment lines at the top of
every output.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .estimators import (
    GridConfig,
    H_star,
    MonotonicityError,
    SelectionError,
    h0_estimate,
    iterate,
    practical_estimate,
    sigma_corrected,
    tau0_estimate,
)
from .likelihood import N_MAX, NotPositiveDefiniteError, asymptotic_variance_H, fisher_F, one_step
from .mc import (
    HIST_FIELDS,
    TABLE_FIELDS,
    TUNING_FIELDS,
    VARCURVE_H,
    VARCURVE_K,
    VARIANCE_FIELDS,
    ExperimentSpec,
    preset,
    run_histogram,
    run_mae_tuning,
    run_table,
    run_variance_curve,
    write_rows,
)
from .model import DegenerateInputError, ParamBox, SamplingScheme, Theta, read_series, write_series
from .preaverage import WeightFunction, default_weight
from .simulate import EmbeddingError, RngStream, synthesize

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _box_args(p: argparse.ArgumentParser) -> None:
    d = ParamBox()
    for name in ("H_lo", "H_hi", "sigma_lo", "sigma_hi", "tau_lo", "tau_hi"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float,
                       default=getattr(d, name), help=f"parameter box bound (default {getattr(d, name)})")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value file with default flag values")
    p.add_argument("--out", type=Path, help="output file (default: standard output)")


def _mc_args(p: argparse.ArgumentParser, default_preset: Optional[str]) -> None:
    p.add_argument("--preset", default=default_preset,
                   choices=["paper-table", "paper-tuning", "paper-histograms"],
                   help="predefined experiment; explicit grid flags override its grids")
    p.add_argument("--H", type=_float_list, help="comma-separated true H values")
    p.add_argument("--tau", type=_float_list, help="comma-separated true tau values")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--n", type=int, default=2 ** 14)
    p.add_argument("--K", type=int, default=0)
    p.add_argument("--reps", type=int, help="replications (default 500, 100 with --fast)")
    p.add_argument("--fast", action="store_true", help="100 replications unless --reps is set")
    p.add_argument("--estimator", choices=["practical", "guess", "iterative"])
    p.add_argument("--nu0", type=_float_list, help="comma-separated threshold values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, help="worker processes (fallback: FBMLAB_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fbmlab", description="Noisy fractional Brownian motion: "
                     "simulation, estimation, Fisher information and Monte Carlo studies.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate one observation series")
    _common(p)
    p.add_argument("--H", type=float, required=False, default=0.3)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--n", type=int, default=2 ** 14)
    p.add_argument("--K", type=int, default=0)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--delta", type=float, help="grid step (default 1/n)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream", type=int, default=0)

    p = sub.add_parser("estimate", help="estimate (H, sigma, tau) from a series file")
    _common(p)
    p.add_argument("--in", dest="input", type=Path, required=False, help="series CSV")
    p.add_argument("--stage", default="practical",
                   choices=["guess", "iterative", "practical", "one-step"])
    p.add_argument("--nu0", type=float, default=2.0)
    p.add_argument("--weight", default="default", choices=["default", "one", "polynomial"])
    p.add_argument("--q-n", dest="q_n", type=int, help="grid resolution (default ceil(log(n)^2))")
    p.add_argument("--K", type=int, help="override the K recorded in the file")
    _box_args(p)

    p = sub.add_parser("mc", help="Monte Carlo bias/std/RMSE table")
    _common(p)
    _mc_args(p, "paper-table")

    p = sub.add_parser("tune", help="mean absolute error of the practical H estimator per nu0")
    _common(p)
    _mc_args(p, "paper-tuning")

    p = sub.add_parser("hist", help="histograms of H estimates on 50 bins of [0, 1]")
    _common(p)
    _mc_args(p, "paper-histograms")
    p.add_argument("--estimators", default="guess,practical",
                   help="comma-separated estimator names")

    p = sub.add_parser("fisher", help="Fisher integrals and asymptotic variance over a grid")
    _common(p)
    p.add_argument("--H", type=_float_list, default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--K", type=_int_list, default="0,1,2")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=1.0)

    p = sub.add_parser("varcurve", help="asymptotic variance of H over an H x K grid")
    _common(p)
    p.add_argument("--preset", choices=["paper-varcurve"],
                   help="the default grid: H = 0.01..0.99, K = 0, 1, 2")
    p.add_argument("--H", type=_float_list, default=",".join(map(str, VARCURVE_H)))
    p.add_argument("--K", type=_int_list, default=",".join(map(str, VARCURVE_K)))
    return parser


# --------------------------------------------------------------------------
# config handling

def read_config(path: Path) -> Dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    values = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise UsageError(f"unknown keys in {args.config}: {', '.join(unknown)}")
    for dest, text in values.items():
        action = known[dest]
        if isinstance(action, argparse._StoreTrueAction):
            values[dest] = text.lower() in ("1", "true", "yes", "on")
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def _header(args: argparse.Namespace) -> List[str]:
    lines = [f"fbmlab {__version__} {args.command}"]
    for key in sorted(vars(args)):
        if key == "command":
            continue
        value = getattr(args, key)
        if isinstance(value, list):
            value = ",".join(map(str, value))
        lines.append(f"{key}={'' if value is None else value}")
    return lines


def _resolve_threads(value: Optional[int]) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("FBMLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"FBMLAB_THREADS must be an integer, got '{env}'")
    return 1


class _Output:
    def __init__(self, path: Optional[Path]):
        self.path = path
        self.handle = None

    def __enter__(self):
        self.handle = sys.stdout if self.path is None else open(self.path, "w")
        return self.handle

    def __exit__(self, *exc):
        if self.path is not None:
            self.handle.close()


# --------------------------------------------------------------------------
# subcommands

def _cmd_simulate(args) -> int:
    theta = Theta(args.H, args.sigma, args.tau)
    scheme = SamplingScheme(args.n, args.delta, args.nu, args.K)
    obs = synthesize(theta, scheme, RngStream(args.seed, args.stream))
    with _Output(args.out) as fh:
        write_series(obs, fh, extra_header=tuple(_header(args)))
    return EXIT_OK


def _weight(name: str, K: int) -> WeightFunction:
    if name == "one":
        return WeightFunction.constant_one()
    if name == "polynomial":
        return WeightFunction.polynomial(K)
    return default_weight(K)


def _cmd_estimate(args) -> int:
    if args.input is None:
        raise UsageError("estimate: --in is required")
    obs = read_series(args.input, K=args.K)
    box = ParamBox(args.H_lo, args.H_hi, args.sigma_lo, args.sigma_hi, args.tau_lo, args.tau_hi)
    grid = GridConfig(args.q_n)
    w = _weight(args.weight, obs.scheme.K)
    if args.stage == "guess":
        h0 = h0_estimate(obs, w, box)
        t0 = tau0_estimate(obs, box)
        s0 = sigma_corrected(obs, h0.H, t0.tau, grid, w, box)
        row = (h0.H, s0.sigma, t0.tau, h0.flags | t0.flags | s0.flags)
    elif args.stage == "iterative":
        res = iterate(obs, grid, w, box)
        row = (res.H, res.sigma, res.tau, res.flags)
    elif args.stage == "practical":
        res = practical_estimate(obs, args.nu0, grid, w, box)
        if "selection-failure" in res.flags:
            raise SelectionError("no pre-averaging level passed the threshold")
        row = (res.H, res.sigma, res.tau, res.flags)
    else:
        if obs.n > N_MAX:
            raise UsageError(f"one-step needs n <= {N_MAX}, the file holds n={obs.n}")
        init = practical_estimate(obs, args.nu0, grid, w, box)
        if "selection-failure" in init.flags:
            raise SelectionError("no pre-averaging level passed the threshold")
        res = one_step(init.theta_hat, obs, box=box)
        row = (res.H, res.sigma, res.tau, init.flags | res.flags)
    H, sigma, tau, flags = row
    with _Output(args.out) as fh:
        write_rows(fh, ("stage", "n", "H", "sigma", "tau", "flags"),
                   [(args.stage, obs.n, H, sigma, tau, ";".join(sorted(flags)))], _header(args))
    return EXIT_OK


def _spec(args, fallback_estimator: str) -> ExperimentSpec:
    threads = args.threads = _resolve_threads(args.threads)
    base = preset(args.preset, args.reps, args.seed, threads, args.fast) if args.preset else None
    if base is None and (args.H is None or args.tau is None):
        raise UsageError("give --preset or both --H and --tau")
    if base is not None and args.H is None and args.tau is None:
        grid = [Theta(t.H, args.sigma, t.tau) for t in base.theta_grid]
    else:
        Hs = args.H if args.H is not None else sorted({t.H for t in base.theta_grid})
        taus = args.tau if args.tau is not None else sorted({t.tau for t in base.theta_grid})
        grid = [Theta(H, args.sigma, tau) for H in Hs for tau in taus]
    reps = args.reps if args.reps is not None else (base.reps if base else (100 if args.fast else 500))
    estimator = args.estimator or (base.estimator if base else fallback_estimator)
    nu0 = args.nu0 if args.nu0 is not None else (base.nu0 if base else (2.0,))
    return ExperimentSpec(grid, SamplingScheme(args.n, K=args.K), reps, estimator, nu0,
                          args.seed, threads)


def _cmd_mc(args) -> int:
    spec = _spec(args, "practical")
    rows = run_table(spec)
    with _Output(args.out) as fh:
        write_rows(fh, TABLE_FIELDS, rows, _header(args))
    return EXIT_OK


def _cmd_tune(args) -> int:
    rows = run_mae_tuning(_spec(args, "practical"))
    with _Output(args.out) as fh:
        write_rows(fh, TUNING_FIELDS, rows, _header(args))
    return EXIT_OK


def _cmd_hist(args) -> int:
    names = [s for s in args.estimators.split(",") if s]
    rows = run_histogram(_spec(args, "practical"), names)
    with _Output(args.out) as fh:
        write_rows(fh, HIST_FIELDS, rows, _header(args))
    return EXIT_OK


def _cmd_fisher(args) -> int:
    rows = []
    for K in args.K:
        for H in args.H:
            F = fisher_F(Theta(H, args.sigma, args.tau), K)
            rows.append((H, K, F[0, 0], F[0, 1], F[1, 1], F[2, 2], asymptotic_variance_H(H, K)))
    with _Output(args.out) as fh:
        write_rows(fh, ("H", "K", "F11", "F12", "F22", "F33", "variance"), rows, _header(args))
    return EXIT_OK


def _cmd_varcurve(args) -> int:
    rows = run_variance_curve(args.H, args.K)
    with _Output(args.out) as fh:
        write_rows(fh, VARIANCE_FIELDS, rows, _header(args))
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "mc": _cmd_mc,
    "tune": _cmd_tune,
    "hist": _cmd_hist,
    "fisher": _cmd_fisher,
    "varcurve": _cmd_varcurve,
}

_NUMERIC_ERRORS = (SelectionError, DegenerateInputError, ArithmeticError, EmbeddingError,
                   MonotonicityError, NotPositiveDefiniteError, np.linalg.LinAlgError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except _NUMERIC_ERRORS as exc:
        print(f"fbmlab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"fbmlab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
