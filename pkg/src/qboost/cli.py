"""``qboost`` command line: score, evaluate, ablate, record.

Exit codes: 0 success, 1 partial failure (some item or mode failed),
2 configuration or input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from typing import Sequence

from . import report as reportlib
from .errors import ConfigError, ManifestError, QBoostError
from .pipeline import RunConfig, load_config, run_ablate, run_evaluate, run_record, run_score
from .prompts import ScoringMode

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INPUT = 2

MODE_CHOICES = ["binary", "tti", "tti+mpe", "tti_mpe"]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (prompts, template, weights, backend, ...)")
    parser.add_argument("--mode", choices=MODE_CHOICES, help="scoring mode; default depends on media kind")
    parser.add_argument("--backend", choices=["stub", "replay", "http"], help="override backend kind")
    parser.add_argument("--cache", help="JSONL logit cache (replay source, or record target)")
    parser.add_argument("--endpoint", help="inference server base URL for the http backend")
    parser.add_argument("--seed", type=int, help="stub backend seed")
    parser.add_argument("--max-in-flight", type=int, help="concurrent backend requests")
    parser.add_argument("--frame-interval", type=float, help="seconds between sampled video frames")
    parser.add_argument("--plcc-logistic", action="store_true", help="also report PLCC after a 4-parameter logistic fit")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qboost", description="Zero-shot visual quality scoring from MLLM tone-word logits.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score one image, frame directory or video")
    p.add_argument("--media", required=True)
    p.add_argument("--item-id", help="item id used for cache keys (default: media file name)")
    _add_common(p)

    p = sub.add_parser("evaluate", help="score a manifest and correlate with MOS")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("ablate", help="evaluate binary / tti / tti+mpe from one fetch")
    p.add_argument("--manifest", required=True, action="append", help="repeat to average sub-sets")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="optional mode,dataset,srcc,plcc summary")
    _add_common(p)

    p = sub.add_parser("record", help="fetch logits for a manifest into a cache")
    p.add_argument("--manifest", required=True)
    _add_common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    backend_updates = {}
    if args.backend:
        backend_updates["kind"] = args.backend
    if args.cache and args.command != "record":
        backend_updates["cache_path"] = args.cache
    if args.endpoint:
        backend_updates["endpoint"] = args.endpoint
    if args.seed is not None:
        backend_updates["seed"] = args.seed
    if args.max_in_flight is not None:
        backend_updates["max_in_flight"] = args.max_in_flight
    backend = config.backend
    if backend_updates:
        # from_dict re-applies the env overrides and validation
        backend = type(backend).from_dict({**dataclasses.asdict(backend), **backend_updates})
    updates = {"backend": backend}
    if args.mode:
        updates["mode"] = ScoringMode.parse(args.mode)
    if args.frame_interval is not None:
        updates["frame_interval"] = args.frame_interval
    if args.plcc_logistic:
        updates["plcc_logistic"] = True
    return dataclasses.replace(config, **updates)


def _emit(payload: dict) -> None:
    sys.stdout.write(reportlib.canonical_json(payload))


def _cmd_score(args: argparse.Namespace, config: RunConfig) -> int:
    breakdown = run_score(config, args.media, item_id=args.item_id)
    payload = {"score": breakdown.score.value, "mode": breakdown.score.mode.value}
    if args.verbose:
        payload["weights"] = {"w1": breakdown.score.weights.w1, "w2": breakdown.score.weights.w2}
        payload["frames"] = breakdown.frame_count
        payload["words"] = breakdown.words
        payload["tone_logits"] = dict(zip(("pos", "neu", "neg"), breakdown.logits.as_tuple()))
        if breakdown.probabilities is not None:
            payload["probabilities"] = dict(zip(("pos", "neu", "neg"), breakdown.probabilities.as_tuple()))
    _emit(payload)
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    outcome = run_evaluate(config, args.manifest, args.out)
    corr = outcome.payload["correlations"]
    summary = {"out": args.out, "mode": outcome.payload["mode"], "correlations": corr,
               "errors": len(outcome.payload["errors"])}
    _emit(summary)
    for err in outcome.payload["errors"]:
        print(f"error: {err['id']}: {err['error']}", file=sys.stderr)
    if outcome.payload["correlation_error"]:
        print(f"error: {outcome.payload['correlation_error']}", file=sys.stderr)
    return outcome.exit_code


def _cmd_ablate(args: argparse.Namespace, config: RunConfig) -> int:
    outcome = run_ablate(config, args.manifest, args.out, csv_out=args.csv)
    summary = [
        {"dataset": row["dataset"], "mode": row["mode"], "correlations": row["correlations"],
         "errors": len(row["errors"])}
        for row in outcome.payload["rows"]
    ]
    _emit({"out": args.out, "rows": summary})
    return outcome.exit_code


def _cmd_record(args: argparse.Namespace, config: RunConfig) -> int:
    if not args.cache:
        raise ConfigError("record requires --cache")
    outcome = run_record(config, args.manifest, args.cache)
    _emit(outcome.payload)
    for err in outcome.payload["errors"]:
        print(f"error: {err['id']}: {err['error']}", file=sys.stderr)
    return outcome.exit_code


COMMANDS = {"score": _cmd_score, "evaluate": _cmd_evaluate, "ablate": _cmd_ablate, "record": _cmd_record}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except (ConfigError, ManifestError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (QBoostError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
