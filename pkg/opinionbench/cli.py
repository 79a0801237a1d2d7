import argparse
import asyncio
import logging
import os
import sys
from typing import List, Optional

from .config import settings
from .errors import OpinionBenchError
from .harness import load_run_config, replay, report, run_benchmark
from .housesim import gen_house_tasks, save_house_tasks
from .shopsim import gen_catalog, gen_goals, load_catalog, save_catalog, save_goals

logger = logging.getLogger("opinionbench")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opinionbench", description="Auto-GPT agents with expert opinions")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a benchmark suite from a YAML run config")
    p.add_argument("config")

    p = sub.add_parser("replay", help="re-run recorded traces and check every observation")
    p.add_argument("run_dir")

    p = sub.add_parser("report", help="re-render the report of a finished run")
    p.add_argument("results_dir")
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")

    p = sub.add_parser("gen-catalog", help="generate a shop catalog")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--out", default=settings.shop_catalog_file)

    p = sub.add_parser("gen-tasks", help="generate shop goals or house tasks")
    p.add_argument("--env", choices=["shop", "house"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--out", default=None)
    p.add_argument("--catalog", default=settings.shop_catalog_file, help="catalog the shop goals are drawn from")

    p = sub.add_parser("serve", help="serve the environments over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "run":
        config = load_run_config(args.config)
        asyncio.run(run_benchmark(config))
        logger.info("reports written to %s", config.output_dir)
        return 0

    if args.command == "replay":
        verdicts = asyncio.run(replay(args.run_dir))
        mismatched = sorted(k for k, ok in verdicts.items() if not ok)
        for key in mismatched:
            print(f"MISMATCH {key}")
        print(f"{len(verdicts) - len(mismatched)}/{len(verdicts)} traces replayed identically")
        return 0 if not mismatched else 1

    if args.command == "report":
        path = report(args.results_dir, args.format)
        print(path)
        return 0

    if args.command == "gen-catalog":
        print(save_catalog(gen_catalog(args.seed, args.n), args.out))
        return 0

    if args.command == "gen-tasks":
        if args.env == "shop":
            out = args.out or settings.shop_goal_file
            print(save_goals(gen_goals(load_catalog(args.catalog), args.seed, args.n), out))
        else:
            out = args.out or settings.house_task_file
            print(save_house_tasks(gen_house_tasks(args.seed, args.n), out))
        return 0

    if args.command == "serve":
        import uvicorn

        uvicorn.run("opinionbench.main:app", host=args.host, port=args.port)
        return 0
    return 2


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (OpinionBenchError, OSError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
