"""Command-line entry point.

Subcommands ``run``, ``twin``, ``sweep``, ``wasserstein`` and ``bounds``.
Global options may be given before or after the subcommand. The exit code
is 0 when every invariant check of the command passes, 1 when a check
fails, 2 for usage and configuration errors and 3 for runtime failures
(solver blowup, CFL violation, transport limits).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="experiment configuration file")
    parser.add_argument("--seed", type=int, default=default, help="base seed (overrides run.seed)")
    parser.add_argument("--out", default=default, help="output directory (overrides output.dir)")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker count; affects speed only")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    parser = argparse.ArgumentParser(prog="qnvp", description="Quasineutral Vlasov-Poisson experiments")
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="single particle-in-cell run")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("twin", parents=[common], help="twin run against the fluid reference")
    p.add_argument("--calibrate", type=int, metavar="SEED",
                   help="fit c0 and c_alpha on a run with SEED before the main run")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("sweep", parents=[common], help="twin runs over several epsilon values")
    p.add_argument("--epsilons", help="comma-separated list (overrides sweep.epsilons)")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("wasserstein", parents=[common], help="distance between two ensemble snapshots")
    p.add_argument("--p", type=int, choices=(1, 2), default=2, dest="order")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--method", choices=("exact", "sinkhorn"), default="exact")
    p.add_argument("--reg", type=float, help="Sinkhorn regularisation")
    p.add_argument("--plan", help="write the optimal plan as i,j,mass triplets (exact only)")

    p = sub.add_parser("bounds", parents=[common], help="envelope check of a diagnostics file")
    p.add_argument("--from", dest="source", required=True, help="diagnostics CSV")
    p.add_argument("--no-figures", action="store_true")
    return parser


def _load_config(args):
    from .harness.config import parse_config

    if not args.config:
        raise SystemExit(_usage("--config is required for this command"))
    cfg = parse_config(args.config)
    upd = {}
    if args.seed is not None:
        upd["run__seed"] = args.seed
    if args.out is not None:
        upd["output__dir"] = args.out
    if getattr(args, "no_figures", False):
        upd["output__figures"] = False
    return cfg.with_values(**upd) if upd else cfg


def _usage(msg: str) -> int:
    print(f"qnvp: error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _status(ok: bool) -> int:
    return EXIT_OK if ok else EXIT_CHECK


def cmd_run(args) -> int:
    from .harness import report, twin

    cfg = _load_config(args)
    rep = twin.run_single(cfg)
    paths = report.write_run_report(rep, cfg, cfg.out_dir)
    print(paths["summary"].read_text())
    return _status(rep.passed)


def cmd_twin(args) -> int:
    from .harness import report, twin

    cfg = _load_config(args)
    if args.calibrate is not None:
        ref = twin.run_twin(cfg, seed=args.calibrate)
        consts = twin.calibrate(ref, cfg.get("bounds", "safety"))
        print("calibrated constants (seed %d): %s" % (args.calibrate, ", ".join(f"{k}={v:.6g}" for k, v in consts.items())))
        cfg = twin.with_constants(cfg, consts)
    rep = twin.run_twin(cfg)
    paths = report.write_twin_report(rep, cfg, cfg.out_dir)
    print(paths["summary"].read_text())
    return _status(rep.passed)


def cmd_sweep(args) -> int:
    from .harness import report, twin

    cfg = _load_config(args)
    eps = None
    if args.epsilons:
        eps = [float(e) for e in args.epsilons.split(",") if e.strip()]
    rows, reps = twin.sweep_epsilon(cfg, eps, threads=max(1, args.threads or 1))
    paths = report.write_sweep_report(rows, reps, cfg, cfg.out_dir)
    print(paths["summary"].read_text())
    return _status(all(r.passed for r in rows))


def cmd_wasserstein(args) -> int:
    from . import pss
    from .core import ParticleEnsemble
    from .transport import w_exact, w_sinkhorn

    mu, nu = pss.read(args.a), pss.read(args.b)
    if not (isinstance(mu, ParticleEnsemble) and isinstance(nu, ParticleEnsemble)):
        return _usage("both snapshots must hold particle ensembles")
    if args.method == "exact":
        dist, plan = w_exact(mu, nu, args.order)
        if args.plan:
            plan.to_csv(args.plan)
    else:
        if args.plan:
            return _usage("--plan needs --method exact")
        dist = w_sinkhorn(mu, nu, args.order, reg=args.reg)
    print(repr(float(dist)))
    return EXIT_OK


def cmd_bounds(args) -> int:
    from .harness import report

    cfg = _load_config(args)
    rows = report.envelope_rows(report.read_diagnostics(args.source), cfg)
    out = Path(args.out) if args.out is not None else Path(args.source).parent
    report.write_envelope_report(rows, cfg, out)
    print(report.envelope_summary(rows))
    return _status(all(r["ok"] for r in rows))


COMMANDS = {
    "run": cmd_run,
    "twin": cmd_twin,
    "sweep": cmd_sweep,
    "wasserstein": cmd_wasserstein,
    "bounds": cmd_bounds,
}


def main(argv=None) -> int:
    from .harness.config import ConfigError
    from .multifluid import BlowupError, ConstraintError
    from .pss import SnapshotError
    from .transport import TransportError
    from .vlasov import CFLError

    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except (ConfigError, SnapshotError, FileNotFoundError) as exc:
        return _usage(str(exc))
    except (BlowupError, ConstraintError, CFLError, TransportError) as exc:
        print(f"qnvp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
