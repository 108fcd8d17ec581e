"""Command-line entry point.

Exit status: 0 on success, 2 on invalid configuration or arguments,
1 on any runtime failure (missing records, IO, numerical errors).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness, meta
from .store import PolicyStore, StoreError

log = logging.getLogger("emaml")


def _common(p: argparse.ArgumentParser, steps=True):
    p.add_argument("--config", metavar="PATH", help="YAML config; omitted sections use the defaults")
    p.add_argument("--store", metavar="PATH", default="store", help="policy store directory")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    if steps:
        p.add_argument("--steps", type=int, help="override the number of training steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emaml", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-nominal", help="PPO-train the controller on the nominal process")
    _common(p)

    p = sub.add_parser("build-complement", help="train one policy per fault and curate the complement")
    _common(p)
    p.add_argument("--faults", nargs="+", metavar="LABEL", help="subset of configured fault labels")

    p = sub.add_parser("prune", help="re-curate the stored complement to --size policies")
    _common(p, steps=False)
    p.add_argument("--size", type=int, help="policies to keep (default: meta.size)")

    p = sub.add_parser("adapt", help="inject the fault, re-initialize, and PPO-train")
    _common(p)
    p.add_argument("--method", choices=harness.METHODS, default="emaml")
    p.add_argument("--rank", type=int, help="complement policies used by the meta-update")
    p.add_argument("--variant", choices=meta.VARIANTS, help="outer-loop update rule")
    p.add_argument("--fault", metavar="LABEL", help="configured fault to adapt to (default: faults.adapt)")

    p = sub.add_parser("report", help="aligned running-reward CSV for stored runs")
    p.add_argument("--store", metavar="PATH", default="store")
    p.add_argument("--out", metavar="PATH", help="write here instead of stdout")
    p.add_argument("run_ids", nargs="+")

    p = sub.add_parser("show-config", help="print the effective configuration")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--env", choices=sorted(harness._DEFAULTS), help="defaults for this environment")
    return parser


def _run(args) -> int:
    if args.command == "report":
        text = harness.cmd_report(PolicyStore(args.store), args.run_ids)
        if args.out:
            from .store import atomic_write
            atomic_write(args.out, text)
        else:
            sys.stdout.write(text)
        return 0

    overrides = {"env": {"kind": args.env}} if getattr(args, "env", None) else None
    config = harness.load_config(args.config, overrides)
    if args.command == "show-config":
        sys.stdout.write(config.dumps())
        return 0
    if getattr(args, "steps", None) is not None and args.steps < config.ppo.t_update:
        raise harness.ConfigError([f"--steps ({args.steps}) is shorter than one PPO update "
                                   f"({config.ppo.t_update})"])
    store = PolicyStore(args.store)

    if args.command == "train-nominal":
        rec = harness.cmd_train_nominal(config, store, args.seed, args.steps)
        print(f"{rec.run_id}: total_reward={rec.total_reward:g} steps={rec.steps} "
              f"first10={rec.extra['first10_mean']:.1f} last10={rec.extra['last10_mean']:.1f}")
    elif args.command == "build-complement":
        faults = None
        if args.faults:
            try:
                faults = [config.fault(l) for l in args.faults]
            except KeyError as exc:
                raise harness.ConfigError([f"fault {exc.args[0]!r} is not in the config"]) from None
        kept = harness.cmd_build_complement(config, store, args.seed, faults, args.steps)
        for e in kept:
            print(f"{e.label}\tD_T={e.total_divergence:.4f}")
    elif args.command == "prune":
        kept = harness.cmd_prune(config, store, args.seed, args.size)
        for e in kept:
            print(f"{e.label}\tD_T={e.total_divergence:.4f}")
    elif args.command == "adapt":
        fault = None
        if args.fault:
            try:
                fault = config.fault(args.fault)
            except KeyError:
                raise harness.ConfigError([f"fault {args.fault!r} is not in the config"]) from None
        rec = harness.cmd_adapt(config, store, args.seed, args.method, args.rank, args.variant,
                                args.steps, fault)
        for row in rec.extra.get("scores", []):
            print(f"{row['label']}\tscore={row['score']:.4f}\trank={row['rank'] or '-'}")
        print(f"{rec.run_id}: total_reward={rec.total_reward:g} steps={rec.steps} "
              f"buffer_steps={rec.extra['buffer_steps']}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (harness.ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StoreError, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
