"""Command-line entry point: run/validate experiment configs, run demos."""

import argparse
import dataclasses
import sys

from .harness import (
    ConfigError,
    default_duffing_config,
    default_golf_config,
    export_trace,
    load_config,
    run_experiment,
)

__all__ = ["main", "build_parser"]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sparseukf",
        description="Run square-root UKF / sparse joint UKF benchmark experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a YAML config file")
    run_p.add_argument("--config", required=True, help="path to the experiment config")
    run_p.add_argument("--out", default=None, help="output directory (overrides config)")
    run_p.add_argument("--seed", type=int, default=None, help="RNG seed (overrides config)")

    demo_p = sub.add_parser("demo", help="run a built-in benchmark configuration")
    demo_p.add_argument("benchmark", choices=["duffing", "golf"])
    demo_p.add_argument("--out", default=None, help="output directory (default results/<benchmark>)")
    demo_p.add_argument("--seed", type=int, default=0)

    val_p = sub.add_parser("validate", help="schema-check a config file without running it")
    val_p.add_argument("--config", required=True, help="path to the experiment config")
    return parser


def _execute(config, out_dir):
    trace, metrics = run_experiment(config)
    written = export_trace(trace, out_dir, metrics)
    if trace.aborted_reason:
        print(f"run aborted: {trace.aborted_reason}", file=sys.stderr)
        print(f"partial artifacts in {out_dir}", file=sys.stderr)
        return 1
    print(f"wrote {len(written)} artifacts to {out_dir}")
    report = metrics.final_report
    dom = report.dominant
    print(
        f"post-transient rmse  squkf: {metrics.rmse_window_squkf.round(6).tolist()}"
        f"  jsqukf: {metrics.rmse_window_jsqukf.round(6).tolist()}"
    )
    active = ", ".join(f"theta_{e.index} ({e.name}) = {e.value:+.4f}" for e in report.entries if e.active)
    print(f"active terms: {active if active else 'none above barrier'}")
    print(f"dominant term: theta_{dom.index} ({dom.name}) = {dom.value:+.4f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            if args.seed is not None:
                config = dataclasses.replace(config, seed=args.seed).validate()
            out_dir = args.out or config.out_dir or "results/run"
            return _execute(config, out_dir)
        if args.command == "demo":
            factory = default_duffing_config if args.benchmark == "duffing" else default_golf_config
            config = factory(seed=args.seed)
            out_dir = args.out or config.out_dir or f"results/{args.benchmark}"
            return _execute(config, out_dir)
        if args.command == "validate":
            config = load_config(args.config)
            print(f"config ok: benchmark={config.benchmark} library={config.library} seed={config.seed}")
            return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
