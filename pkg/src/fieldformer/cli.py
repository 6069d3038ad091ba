"""Command-line entry point: generate, train, evaluate, report, gradcheck.

Exit codes are shared by every subcommand: 0 success, 1 runtime failure,
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import sys
import time

from .archive import ArchiveError
from .benchmarks import BENCHMARKS
from .evaluation import ReportError
from .pipeline import MODEL_KINDS, ConfigError, generate, load_config, run_evaluate, run_report, train
from .simulators import CFLError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="TOML run config (defaults are used when omitted)")
    p.add_argument("-b", "--benchmark", choices=BENCHMARKS, help="override the benchmark named in the config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fieldformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a benchmark and sample sensors into a dataset archive")
    _add_config(p)
    p.add_argument("--desk", action="store_true", help="reduced 32x32x2000 grid")
    p.add_argument("-o", "--out", help="dataset path (default: <paths.root>/<benchmark>/dataset.ffar)")

    p = sub.add_parser("train", help="fit a model to a dataset and write a checkpoint")
    _add_config(p)
    p.add_argument("-d", "--dataset", help="dataset archive")
    p.add_argument("--model", choices=MODEL_KINDS, help="architecture (default: model.kind from the config)")
    p.add_argument("--no-physics", action="store_true", help="ablation: lambda_pde = lambda_bc = 0")
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")
    p.add_argument("-o", "--out", help="checkpoint path")
    p.add_argument("--log", help="training log CSV path")
    p.add_argument("-q", "--quiet", action="store_true", help="no progress lines")

    p = sub.add_parser("evaluate", help="compute the metric suite into a metrics CSV")
    _add_config(p)
    p.add_argument("-d", "--dataset", help="dataset archive")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--checkpoint", help="trained checkpoint")
    src.add_argument("--oracle", action="store_true", help="evaluate the trilinear interpolator of the true field")
    src.add_argument("--nearest", action="store_true", help="evaluate the nearest-sensor baseline")
    ff = p.add_mutually_exclusive_group()
    ff.add_argument("--full-field", dest="full_field", action="store_true", default=None,
                    help="include the strided full-field sweep")
    ff.add_argument("--no-full-field", dest="full_field", action="store_false")
    p.add_argument("--method", help="method label in the CSV (default: derived from the checkpoint)")
    p.add_argument("-o", "--out", help="metrics CSV path")

    p = sub.add_parser("report", help="merge metrics CSVs into the aligned text table")
    p.add_argument("metrics", nargs="+", help="metrics CSV files")
    p.add_argument("-o", "--out", default="report.txt", help="report path (default: report.txt)")

    p = sub.add_parser("gradcheck", help="autodiff and invariance self-checks")
    p.add_argument("--seeds", type=int, default=5, help="random draws per check (default: 5)")
    p.add_argument("--only", help="run only checks whose name contains this string")
    return parser


def cmd_generate(args) -> int:
    cfg = load_config(args.config, args.benchmark)
    if args.desk:
        cfg.desk = True
    print(f"config hash {cfg.digest()}")
    path = generate(cfg, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.benchmark)
    t0 = time.perf_counter()
    res = train(cfg, args.dataset, args.model, physics=not args.no_physics, out=args.out, log=args.log,
                resume_from=args.resume, quiet=args.quiet)
    print(f"config hash {res.digest}")
    tr = res.trainer
    print(f"wrote {res.checkpoint} (step {tr.step}, best val rmse {tr.best_val:.4e} at step {tr.best_step}, "
          f"{time.perf_counter() - t0:.0f}s)")
    if tr.aborted:
        print(f"error: {tr.aborted} step(s) aborted on non-finite loss", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.benchmark)
    print(f"config hash {cfg.digest()}")
    ms, path = run_evaluate(cfg, args.dataset, args.checkpoint, args.oracle, args.nearest, args.full_field,
                            args.out, args.method)
    for key, v in ms.values.items():
        std = ms.stds.get(key)
        print(f"  {key:16s} {'undefined' if v is None else f'{v:.6g}'}" + (f" +- {std:.3g}" if std is not None else ""))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .trainer import config_hash
    print(f"config hash {config_hash({'metrics': sorted(args.metrics), 'out': args.out})}")
    text = run_report(args.metrics, args.out)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import run_gradchecks
    from .trainer import config_hash
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    print(f"config hash {config_hash({'seeds': args.seeds, 'only': args.only})}")
    results = run_gradchecks(args.seeds, args.only)
    if not results:
        raise ConfigError(f"no check matches {args.only!r}")
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:28s} err {r.error:.2e}  tol {r.tol:.0e}")
    if failed:
        print("failing: " + ", ".join(r.name for r in failed), file=sys.stderr)
        return EXIT_RUNTIME
    print(f"all {len(results)} checks passed over {args.seeds} seed(s)")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "report": cmd_report,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)   # argparse exits with 2 on usage errors
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ReportError, CFLError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ArchiveError, ArithmeticError, RuntimeError, ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
