"""Command-line entry point: ``aan-gaitsim run | sweep | validate``.

Exit codes: 0 success, 2 the optimizer hit its episode cap without
converging, 1 any error (bad config, I/O failure, estimator lock loss).
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, SimConfig, load_config, with_seed
from .export import export
from .harness import EstimatorLockError, run_protocol
from .plant import PlantConfigError, fit_nominal

log = logging.getLogger("aan_gaitsim")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"1..10"`` (inclusive) or a comma list of either."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        m = re.fullmatch(r"(-?\d+)\s*\.\.\s*(-?\d+)", part)
        if m:
            a, b = int(m.group(1)), int(m.group(2))
            if b < a:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            seeds.extend(range(a, b + 1))
        elif re.fullmatch(r"-?\d+", part):
            seeds.append(int(part))
        else:
            raise argparse.ArgumentTypeError(f"bad seed spec {part!r}; use N, A..B or a comma list")
    return seeds


def _load(path: Optional[str]) -> SimConfig:
    cfg = load_config(path)
    fit_nominal(cfg.plant)  # reject plant shapes the walker cannot produce
    return cfg


def _run_one(cfg: SimConfig, seed: int, out: Path, trace: bool) -> tuple[int, bool, float]:
    res = run_protocol(with_seed(cfg, seed), trace=trace)
    export(res, out, seed=seed)
    conv = res.convergence.get("converged", True) if res.convergence else True
    return seed, bool(conv), res.wall_time


def _report(seed: int, converged: bool, wall: float, out: Path) -> None:
    state = "converged" if converged else "NOT converged (episode cap reached)"
    print(f"seed {seed}: {state}; {wall:.1f} s; wrote {out}")


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    out = Path(args.out)
    seed, conv, wall = _run_one(cfg, args.seed, out, not args.no_trace)
    _report(seed, conv, wall, out)
    return EXIT_OK if conv else EXIT_NOT_CONVERGED


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    root = Path(args.out)
    jobs = [(cfg, s, root / f"seed_{s}", not args.no_trace) for s in args.seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*j) for j in jobs]
    failed = 0
    for (seed, conv, wall), job in zip(results, jobs):
        _report(seed, conv, wall, job[2])
        failed += not conv
    print(f"{len(results) - failed}/{len(results)} runs converged")
    return EXIT_OK if failed == 0 else EXIT_NOT_CONVERGED


def cmd_validate(args: argparse.Namespace) -> int:
    _load(args.config)
    print(f"{args.config}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aan-gaitsim", description="Assist-as-needed hip exoskeleton gait simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the full protocol for one seed")
    r.add_argument("--config", help="YAML config (defaults if omitted)")
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--no-trace", action="store_true", help="skip the per-sample trace.csv")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run the protocol for a range of seeds")
    s.add_argument("--config", help="YAML config (defaults if omitted)")
    s.add_argument("--seeds", type=parse_seeds, required=True, help="e.g. 1..10 or 1,4,7")
    s.add_argument("--out", required=True, help="output root; one seed_<n>/ per run")
    s.add_argument("--workers", type=int, default=1, help="parallel processes")
    s.add_argument("--no-trace", action="store_true", help="skip the per-sample trace.csv")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check a config file against the schema")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PlantConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except EstimatorLockError as exc:
        print(f"estimator lost lock: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
