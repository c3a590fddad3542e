"""Command line: ``bikedqn {generate,train,eval,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, build_config
from .domain import InvalidInstanceError
from .neural import CheckpointError
from .report import ReportInputError, cmd_report
from .simulator import SimulationFault

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4
EXIT_RUNTIME = 5

LOG = logging.getLogger("bikedqn")


def _pairs(items, what):
    out = []
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"{what} {item!r} must look like NAME=PATH")
        name, path = item.split("=", 1)
        out.append((name, path))
    return out


def _add_config_args(p):
    p.add_argument("--profile", choices=["smoke", "desk", "full"], help="preset configuration")
    p.add_argument("--config", help="JSON config file layered over the profile")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. trainer.total_steps=1000 (repeatable)")
    p.add_argument("--data-dir", help="dataset directory (overrides data_dir)")
    p.add_argument("--out", help="output directory (overrides output_dir)")


def _config(args):
    overrides = list(args.overrides)
    if getattr(args, "data_dir", None):
        overrides.append(f"data_dir={json.dumps(args.data_dir)}")
    if getattr(args, "out", None):
        overrides.append(f"output_dir={json.dumps(args.out)}")
    return build_config(args.profile, args.config, overrides)


def run_generate(args) -> int:
    from .harness import cmd_generate

    cfg = _config(args)
    out = cmd_generate(cfg)
    print(f"wrote dataset {cfg.name!r} ({cfg.day_count} days) to {out}")
    return 0


def run_train(args) -> int:
    from .harness import cmd_train, train_summary

    cfg = _config(args)
    for name, out_dir, result in cmd_train(cfg, args.sweep):
        s = train_summary(result, args.window)
        print(
            f"{name}: {s['episodes']} episodes, final moving-average return {s['final_return_ma']:.2f}, "
            f"TD loss {s['final_td_loss_ma']:.4f} -> {out_dir}"
        )
    return 0


def run_eval(args) -> int:
    from .harness import cmd_eval, read_csv

    cfg = _config(args)
    if args.epsilon:
        cfg.eval_epsilons = tuple(args.epsilon)
    models = _pairs(args.model, "--model")
    out = cmd_eval(cfg, models, args.out or cfg.output_dir, include_baselines=not args.no_baselines)
    for r in read_csv(out / "summary.csv"):
        print(f"{r['model']:>24} eps={float(r['epsilon']):.2f} mean lost {float(r['mean_lost']):8.2f} "
              f"(sd {float(r['std_lost']):.2f}) length {float(r['mean_length']):.1f}")
    return 0


def run_report(args) -> int:
    metrics = _pairs(args.metrics, "--metrics")
    out = cmd_report(metrics, args.summary or [], args.out, args.window, args.points)
    print(f"wrote report to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bikedqn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write instance, trip files and manifest")
    _add_config_args(g)
    g.set_defaults(func=run_generate)

    t = sub.add_parser("train", help="train a DQN (or a sweep of variants)")
    _add_config_args(t)
    t.add_argument("--sweep", choices=["mu", "activation", "routing"])
    t.add_argument("--window", type=int, default=100, help="moving-average window for the exit summary")
    t.set_defaults(func=run_train)

    e = sub.add_parser("eval", help="evaluate checkpoints and baselines on the test days")
    _add_config_args(e)
    e.add_argument("--model", action="append", metavar="NAME=CHECKPOINT")
    e.add_argument("--epsilon", type=float, action="append", help="evaluation epsilon (repeatable)")
    e.add_argument("--no-baselines", action="store_true")
    e.set_defaults(func=run_eval)

    r = sub.add_parser("report", help="smoothed curves and ranked comparison table")
    r.add_argument("--metrics", action="append", metavar="LABEL=METRICS_CSV")
    r.add_argument("--summary", action="append", metavar="SUMMARY_CSV")
    r.add_argument("--window", type=int, default=100)
    r.add_argument("--points", type=int, default=500, help="max rows per curve file")
    r.add_argument("--out", required=True)
    r.set_defaults(func=run_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (FileNotFoundError, InvalidInstanceError, ReportInputError, ValueError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (SimulationFault, FloatingPointError) as e:
        print(f"runtime fault: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
