"""Command line entry point: ``gmctorus <subcommand> [flags]``."""

import argparse
import json
import math
import sys

from . import __version__
from .analysis import dimension_branch, fl_window, predicted_dimension, zeta, zeta_argmax
from .config import merge, parse_shells, read_config_file
from .errors import CertificationFailed, GMCError
from .kernel import GridKernel, certify_kernel
from .sampler import check_gamma
from . import pipeline


def _common(p, with_run=True):
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--dim", dest="d", type=int)
    p.add_argument("--gamma", type=float)
    if with_run:
        p.add_argument("--grid-log2", dest="grid_log2", type=int)
        p.add_argument("--levels", type=int)
        p.add_argument("--replicas", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--tau", type=float)
        p.add_argument("--p", type=float)
        p.add_argument("--q", type=float)
        p.add_argument("--shells", type=parse_shells, help="regression shell range lo:hi")
        p.add_argument("--mode", choices=("sup", "mean"))


def build_parser():
    parser = argparse.ArgumentParser(prog="gmctorus", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="predicted dimension and moment window")
    _common(p, with_run=False)
    p.add_argument("--tau", type=float)

    p = sub.add_parser("kernel-check", help="certify the scale kernels")
    _common(p)
    p.add_argument("--load", help="certify a saved kernel (.npz) instead of building")

    p = sub.add_parser("pou-check", help="certify partitions of unity and the decoupling identity")
    _common(p)

    p = sub.add_parser("simulate", help="run an ensemble and write an artifact directory")
    _common(p)
    p.add_argument("--spectrum-csv", dest="spectrum_csv", action="store_true", default=None)
    p.add_argument("--dump-fields", dest="dump_fields", action="store_true", default=None)

    p = sub.add_parser("analyze", help="estimate dimensions from an artifact directory")
    p.add_argument("run_dir")

    p = sub.add_parser("report", help="aggregate several analysed runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--json", action="store_true", help="print the raw report")
    return parser


_CONFIG_KEYS = (
    "d", "gamma", "grid_log2", "levels", "replicas", "seed", "out",
    "tau", "p", "q", "shells", "mode", "spectrum_csv", "dump_fields",
)


def config_from_args(args):
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    flags = {k: getattr(args, k) for k in _CONFIG_KEYS if hasattr(args, k)}
    return merge(file_values, flags)


def cmd_predict(args):
    cfg = config_from_args(args)
    d, gamma = cfg.d, cfg.gamma
    check_gamma(gamma, d)
    D = predicted_dimension(gamma, d)
    p_star = zeta_argmax(gamma, d)
    win = fl_window(gamma, d, cfg.tau if cfg.tau is not None else D / 2)
    print(f"d = {d}, gamma = {gamma}")
    print(f"predicted dimension D = {D:.6f}  (branch {dimension_branch(gamma, d)})")
    print(f"zeta maximiser p* = {p_star:.6f}, zeta(p*) = {zeta(p_star, gamma, d):.6f}")
    print(f"moment window: p = {win['p']:.4f}, tau < {win['tau_max']:.4f}")
    if win["q"] is None:
        print(f"  tau = {win['tau']:.4f}: no admissible q")
    else:
        print(f"  tau = {win['tau']:.4f}: q = {win['q']} (slack {win['slack']:.4f})")
    print(f"subcritical range: (0, {math.sqrt(2 * d):.6f})")
    return 0


def _print_checks(rep):
    for name, ok in rep["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")


def cmd_kernel_check(args):
    if args.load:
        ker = GridKernel.load(args.load)
        cert = certify_kernel(ker)
        print(json.dumps(cert, indent=2, sort_keys=True))
        return 0
    rep = pipeline.kernel_check(config_from_args(args), out=args.out)
    _print_checks(rep)
    ls = rep["log_sum"]
    if ls is not None:
        for row in ls["increments"]:
            flag = "" if row["passed"] is None else (" ok" if row["passed"] else " off")
            print(f"  a={row['a']:2d} increment {row['increment']:.6f} (log2 {row['deviation']:+.4f}){flag}")
    if not rep["passed"]:
        failing = next(n for n, ok in rep["checks"].items() if not ok)
        print(f"first failing certificate: {failing}", file=sys.stderr)
        return 1
    return 0


def cmd_pou_check(args):
    rep = pipeline.pou_check(config_from_args(args), out=args.out)
    _print_checks(rep)
    if not rep["passed"]:
        failing = next(n for n, ok in rep["checks"].items() if not ok)
        print(f"first failing certificate: {failing}", file=sys.stderr)
        return 1
    return 0


def cmd_simulate(args):
    out = pipeline.simulate(config_from_args(args), out=args.out)
    print(out)
    return 0


def cmd_analyze(args):
    res = pipeline.analyze(args.run_dir)
    print(json.dumps({k: res[k] for k in ("predicted", "verdicts")}, indent=2, sort_keys=True))
    for key in ("fourier", "correlation"):
        est = res[key]
        if "dimension" in est:
            print(f"{est['method']}: {est['dimension']:.4f} +- {est['stderr']:.4f}")
        else:
            print(f"{key}: {est['error']}")
    return 0


def cmd_report(args):
    rep = pipeline.report(args.run_dirs)
    print(json.dumps(rep, indent=2, sort_keys=True) if args.json else pipeline.format_report(rep))
    return 0


COMMANDS = {
    "predict": cmd_predict,
    "kernel-check": cmd_kernel_check,
    "pou-check": cmd_pou_check,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CertificationFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (GMCError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
