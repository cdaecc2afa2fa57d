"""Command-line entry points for every pipeline stage.

Each subcommand runs one stage against the artifacts named in the
configuration file (COLLABQR_* environment variables override file keys).
The rewrite subcommand either loads artifacts in process or, with --server,
acts as a thin client of a running serve instance.
"""

from __future__ import annotations

import argparse
import json
import sys

from collabqr.config import PipelineConfig, load_config, render_config
from collabqr.pipeline import (
    MissingArtifactError,
    StageResult,
    load_system,
    stage_build_graph,
    stage_build_index,
    stage_evaluate_coverage,
    stage_evaluate_metrics,
    stage_export_finetune,
    stage_predict_links,
    stage_synth,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collabqr",
        description="Collaborative query rewriting pipeline.",
    )
    parser.add_argument("--config", help="path to a key=value configuration file")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="generate the synthetic world and logs")
    sub.add_parser("build-graph", help="build the interaction graph from logs")

    p = sub.add_parser("build-index", help="build per-user collaborative indexes")
    group = p.add_mutually_exclusive_group()
    group.add_argument(
        "--traversal-only",
        action="store_true",
        help="graph traversal candidates only (default)",
    )
    group.add_argument(
        "--with-predictions",
        action="store_true",
        help="also merge candidates reached through the predictions file",
    )
    p.add_argument("--cap", type=int, help="entries kept per user index")

    p = sub.add_parser("predict-links", help="predict new user-entity links")
    group = p.add_mutually_exclusive_group()
    group.add_argument(
        "--method",
        choices=["cooccurrence"],
        default="cooccurrence",
        help="prediction method (default: cooccurrence)",
    )
    group.add_argument(
        "--export-requests",
        action="store_true",
        help="write prompt-ready prediction requests instead of predicting",
    )

    sub.add_parser("export-finetune", help="export instruction-tuning examples")

    p = sub.add_parser("evaluate", help="run the offline evaluation")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--metrics", action="store_true", help="trigger/precision metrics")
    group.add_argument("--coverage", action="store_true", help="hop and cap coverage")

    p = sub.add_parser("rewrite", help="rewrite one query")
    p.add_argument("--user", required=True, help="user id")
    p.add_argument("--query", required=True, help="query text")
    p.add_argument("--server", help="base URL of a running serve instance")

    p = sub.add_parser("serve", help="serve the rewrite endpoint over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    sub.add_parser("show-config", help="print the effective configuration")
    return parser


def _print_result(result: StageResult) -> None:
    print(f"{result.name}: ok")
    for path in result.outputs:
        print(f"  wrote {path}")
    for key in sorted(result.details):
        print(f"  {key} = {result.details[key]}")


def _cap_override(config: PipelineConfig, cap: int | None) -> int | None:
    if cap is not None and cap < 1:
        raise ValueError("--cap must be >= 1")
    return cap


def _rewrite_via_server(server: str, user: str, query: str) -> dict:
    import httpx

    url = server.rstrip("/") + "/rewrite"
    response = httpx.post(url, json={"user_id": user, "query": query}, timeout=30.0)
    response.raise_for_status()
    return response.json()


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.command == "synth":
            _print_result(stage_synth(config))
        elif args.command == "build-graph":
            _print_result(stage_build_graph(config))
        elif args.command == "build-index":
            cap = _cap_override(config, args.cap)
            _print_result(
                stage_build_index(
                    config, with_predictions=args.with_predictions, cap=cap
                )
            )
        elif args.command == "predict-links":
            _print_result(
                stage_predict_links(config, export_requests=args.export_requests)
            )
        elif args.command == "export-finetune":
            _print_result(stage_export_finetune(config))
        elif args.command == "evaluate":
            if args.metrics:
                result, _, text = stage_evaluate_metrics(config)
            else:
                result, _, text = stage_evaluate_coverage(config)
            print(text, end="")
            _print_result(result)
        elif args.command == "rewrite":
            if args.server:
                body = _rewrite_via_server(args.server, args.user, args.query)
            else:
                decision = load_system(config).rewrite(args.user, args.query)
                body = {
                    "triggered": decision.triggered,
                    "rewrite": decision.rewrite,
                    "score": decision.score,
                }
            print(json.dumps(body, sort_keys=True))
        elif args.command == "serve":
            import uvicorn

            from collabqr.service import create_app

            app = create_app(load_system(config))
            uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
        elif args.command == "show-config":
            print(render_config(config), end="")
        else:  # unreachable with required=True
            parser.error(f"unknown command {args.command}")
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
