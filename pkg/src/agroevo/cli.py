"""Command line entry point.

Exit codes: 0 success, 1 user error (bad config, missing prerequisites,
unreadable inputs, provider failures), 2 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

from .evolution import SeedingError
from .landscape import LandscapeParseError
from .llm_gateway import ProviderError
from .pipeline import PipelineError, RunConfig, RunContext, generate_landscape_stage, record_reports, run_explain, run_stages
from .reports import emit_reports

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
ALL_STAGES = ("1", "2", "3", "4")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agroevo", description="Heuristic and nudge discovery for farm landscapes.")
    p.add_argument("--run-dir", required=True, type=Path, help="root directory for all run artifacts")
    p.add_argument("--config", type=Path, help="YAML run config (defaults to <run-dir>/config.yaml)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-landscape", help="generate and write the synthetic landscape")
    run = sub.add_parser("run", help="run one stage or all stages")
    run.add_argument("--stage", choices=[*ALL_STAGES, "all"], default="all")
    ex = sub.add_parser("explain", help="summarise the evolved heuristics per farm")
    ex.add_argument("--stage", choices=["2", "3", "all"], default="all")
    sub.add_parser("report", help="write plots and tables from tracking exports")
    sub.add_parser("resume", help="continue all stages not yet complete")
    return p


def _context(args) -> RunContext:
    config = RunConfig.load(args.config) if args.config else None
    if config is None and not (args.run_dir / "config.yaml").is_file():
        config = RunConfig.from_dict({})
    return RunContext.open(args.run_dir, config)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            paths = emit_reports(args.run_dir)
            record_reports(args.run_dir, paths)
            print(f"wrote {len(paths)} report files to {args.run_dir / 'reports'}")
            return EXIT_OK
        ctx = _context(args)
        if args.command == "generate-landscape":
            land = generate_landscape_stage(ctx)
            print(f"wrote {len(land.farms)} farms to {ctx.run_dir / 'landscape'}")
        elif args.command == "run":
            stages = ALL_STAGES if args.stage == "all" else (args.stage,)
            run_stages(ctx, stages)
            print(f"completed stage(s) {', '.join(stages)}")
        elif args.command == "resume":
            run_stages(ctx, ALL_STAGES, skip_complete=True)
            print("all enabled stages complete")
        elif args.command == "explain":
            stages = ("2", "3") if args.stage == "all" else (args.stage,)
            out = run_explain(ctx, stages)
            print(f"wrote {len(out)} summaries under {ctx.run_dir / 'explain'}")
        return EXIT_OK
    except (PipelineError, LandscapeParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except ProviderError as exc:
        print(f"error: model provider failed: {exc}", file=sys.stderr)
        return EXIT_USER
    except SeedingError as exc:
        print(f"error: no valid initial population (check the provider and audit.jsonl): {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
