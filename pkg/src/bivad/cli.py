"""Command-line entry point.

    bivad <command> [--config FILE] [section.field=value ...]

Commands: train, infer, eval, synth, bench.  Every failure with a known
cause prints one `error:<code>: <message>` line on stderr and exits
nonzero.  Set BIVAD_THREADS to cap BLAS threading; it must take effect
before the numeric stack loads, which is why the heavy imports live inside
main().
"""

from __future__ import annotations

import argparse
import os
import sys

THREAD_ENV_KEYS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                   "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _apply_thread_cap() -> int | None:
    raw = os.environ.get("BIVAD_THREADS", "").strip()
    if not raw:
        return None
    try:
        threads = max(1, int(raw))
    except ValueError:
        print(f"error:config: BIVAD_THREADS must be an integer, got {raw!r}",
              file=sys.stderr)
        raise SystemExit(2)
    for key in THREAD_ENV_KEYS:
        os.environ[key] = str(threads)
    return threads


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bivad",
        description="middle-frame video anomaly detection")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (
            ("train", "fit a model on the train split"),
            ("infer", "score the test split with a checkpoint"),
            ("eval", "compare written scores against ground truth"),
            ("synth", "generate a synthetic dataset"),
            ("bench", "measure inference speed")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", default=None, metavar="FILE",
                        help="key=value config file")
        sp.add_argument("overrides", nargs="*", metavar="key=value",
                        help="config overrides, e.g. data.root=/tmp/ds")
    return p


def _print_report(report: dict) -> None:
    for k, v in report.items():
        if isinstance(v, float):
            print(f"{k}={v:.6f}")
        elif not isinstance(v, (list, dict)):
            print(f"{k}={v}")


def main(argv: list[str] | None = None) -> int:
    threads = _apply_thread_cap()
    args = _parser().parse_args(argv)

    from .config import load_config
    from .errors import BivadError

    try:
        cfg = load_config(args.config, args.overrides)
        if threads is not None:
            cfg.train.prefetch = min(cfg.train.prefetch, threads)

        if args.command == "train":
            from .train import train_model
            result = train_model(cfg, log=print)
            _print_report({"best_val_loss": result.best_val_loss,
                           "best_epoch": result.best_epoch,
                           "epochs": len(result.history),
                           "checkpoint": result.checkpoint_path})
        elif args.command == "infer":
            from .score import run_inference
            _print_report(run_inference(cfg, log=print))
        elif args.command == "eval":
            from .evaluate import evaluate
            _print_report(evaluate(cfg, log=None))
        elif args.command == "synth":
            from .errors import InvalidArgumentError
            from .synth import generate_dataset
            if not cfg.data.root:
                raise InvalidArgumentError("synth needs data.root to write into")
            _print_report(generate_dataset(cfg.synth, cfg.data.root))
        elif args.command == "bench":
            from .score import run_benchmark
            _print_report(run_benchmark(cfg, log=print))
    except BivadError as exc:
        print(f"error:{exc.code}: {exc.message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
