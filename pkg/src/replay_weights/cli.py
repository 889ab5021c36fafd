"""``replay-weights`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .harness import (
    NOT_CONVERGED,
    ConfigError,
    ExperimentConfig,
    ablation_grid,
    batch_size_study,
    per_composition_study,
    run_experiment,
)
from .validate import main_suite

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROPERTY = 3

log = logging.getLogger("replay_weights")


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0,1,2"`` or a range ``"0-9"`` (inclusive), or a mix of both."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigError(f"bad seed list {text!r}") from None
    if not seeds:
        raise ConfigError("seed list must be nonempty")
    return tuple(sorted(set(seeds)))


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seeds:
        config = config.with_(seeds=parse_seeds(args.seeds))
    return config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="replay-weights", description="Weighted-loss replay experiments.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="versioned JSON experiment config")
        p.add_argument("--seeds", help="override the seed list, e.g. 0-9 or 1,4,7")
        p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    common(sub.add_parser("run", help="train one configuration over all seeds"))
    common(sub.add_parser("ablate", help="run the 12-cell kernel ablation grid"))
    bs = sub.add_parser("batch-study", help="convergence with and without weighting per batch size")
    common(bs)
    bs.add_argument("--sizes", default="128,256,512", help="comma-separated batch sizes")
    common(sub.add_parser("per-study", help="compare uniform/prioritized replay with and without weighting"))
    vk = sub.add_parser("validate-kernel", help="run the kernel property suite")
    vk.add_argument("--seed", type=int, default=0)
    vk.add_argument("--batches", type=int, default=1000)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("REPLAY_WEIGHTS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)

    if args.verb == "validate-kernel":
        ok, text = main_suite(args.seed, args.batches)
        print(text)
        return EXIT_OK if ok else EXIT_PROPERTY

    try:
        config = _load_config(args)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.verb == "batch-study":
            sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
            if not sizes or min(sizes) < 1:
                raise ConfigError("--sizes must list positive integers")
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out
    log.info("config fingerprint %s, %d seeds, output %s", config.fingerprint(), len(config.seeds), out)
    if args.verb == "run":
        records = run_experiment(config, out, jobs=args.jobs)
        summary = json.loads((out / "summary.json").read_text())
        print(f"config_fingerprint={config.fingerprint()}")
        for r in records:
            conv = NOT_CONVERGED if r.convergence_episode is None else r.convergence_episode
            print(f"seed {r.seed}: final smoothed success {r.smoothed_success[-1]:.2f}, convergence episode {conv}")
        print(f"median convergence episode: {summary['median_convergence_episode']}")
    elif args.verb == "ablate":
        print(ablation_grid(config, out, jobs=args.jobs)["table"], end="")
    elif args.verb == "batch-study":
        print(batch_size_study(config, sizes, out, jobs=args.jobs)["table"], end="")
    elif args.verb == "per-study":
        result = per_composition_study(config, out, jobs=args.jobs)
        for name, s in result["summary"].items():
            print(
                f"{name:9s} final smoothed success {s['mean_final_smoothed_success']:.2f}"
                f"  mean return {s['mean_return']:.1f}  median convergence {s['median_convergence_episode']}"
            )
        for name, ok in result["checks"].items():
            print(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not all(result["checks"].values()):
            return EXIT_PROPERTY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
