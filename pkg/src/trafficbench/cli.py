"""Command-line entry point: ``trafficbench <stage> --config cfg.yaml``.

Exit codes: 0 ok, 1 usage/config error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .knowledge import (
    KnowledgeEntry,
    LLMUnavailable,
    MalformedResponse,
    SchemaViolation,
    TransportFailure,
    author_knowledge_entry,
    dump_knowledge_base,
    load_knowledge_base,
)
from .loss import evaluate_case
from .synth import make_minicorpus

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

STAGE_FUNCS = {
    "ingest": pipeline.stage_ingest,
    "curate": pipeline.stage_curate,
    "tensorize": pipeline.stage_tensorize,
    "features": pipeline.stage_features,
    "targets": pipeline.stage_targets,
}


class UsageError(Exception):
    pass


def _config(args) -> pipeline.PipelineConfig:
    if not args.config:
        raise UsageError("--config is required for this command")
    cfg = pipeline.PipelineConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.curation.seed = args.seed
    return cfg


def cmd_stage(args) -> dict:
    cfg = _config(args)
    if args.command == "ingest":
        cfg.validate_paths()
    return STAGE_FUNCS[args.command](cfg)


def cmd_eval(args) -> dict:
    cfg = _config(args)
    return pipeline.stage_eval(cfg, args.predictions, args.references)


def cmd_run_all(args) -> dict:
    return pipeline.run_all(_config(args))


def cmd_loss_oracle(args) -> dict:
    try:
        case = json.loads(Path(args.case).read_text())
    except FileNotFoundError as exc:
        raise pipeline.MissingInput(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.case}: {exc}") from exc
    return evaluate_case(case)


def cmd_make_minicorpus(args) -> dict:
    cfg = make_minicorpus(args.directory, seed=args.seed if args.seed is not None else 7)
    return {"config": str(cfg)}


def cmd_author_kb(args) -> dict:
    """Author entries via the configured LLM endpoint and merge them into a KB file."""
    kb: dict[str, KnowledgeEntry] = {}
    if Path(args.output).exists():
        kb = load_knowledge_base(args.output)
    template = Path(args.prompt_template).read_text() if args.prompt_template else None
    failures = {}
    for name in args.classes:
        try:
            kb[name] = author_knowledge_entry(name, template)
        except LLMUnavailable:
            raise
        except (TransportFailure, MalformedResponse) as exc:
            failures[name] = f"{type(exc).__name__}: {exc}"
    dump_knowledge_base(kb, args.output)
    return {"written": sorted(set(args.classes) - set(failures)), "failed": failures}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trafficbench", description=__doc__.splitlines()[0])
    parser.add_argument("--format", choices=("text", "json"), default="text", help="output and error format")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", "-c", help="pipeline config (YAML or JSON)")
        p.add_argument("--seed", type=int, help="override curation.seed")
        return p

    for name in STAGE_FUNCS:
        with_config(sub.add_parser(name, help=f"run the {name} stage")).set_defaults(func=cmd_stage)
    p = with_config(sub.add_parser("eval", help="score predictions against references"))
    p.add_argument("--predictions", type=Path, help="predictions JSONL (default: config or references)")
    p.add_argument("--references", type=Path, help="references JSONL (default: <output_dir>/test.jsonl)")
    p.set_defaults(func=cmd_eval)
    with_config(sub.add_parser("run-all", help="run every stage in order")).set_defaults(func=cmd_run_all)

    p = sub.add_parser("loss-oracle", help="evaluate a JSON loss case file")
    p.add_argument("case", help="JSON file with {inputs, config}")
    p.set_defaults(func=cmd_loss_oracle)

    p = sub.add_parser("make-minicorpus", help="write the bundled three-class synthetic corpus")
    p.add_argument("directory", type=Path)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_make_minicorpus)

    p = sub.add_parser("author-kb", help="author knowledge-base entries with an LLM endpoint")
    p.add_argument("classes", nargs="+")
    p.add_argument("--output", "-o", required=True, help="KB JSON file to create or extend")
    p.add_argument("--prompt-template", help="prompt file; {class_name} is substituted")
    p.set_defaults(func=cmd_author_kb)
    return parser


def _emit_error(args, kind: str, exc: Exception, code: int) -> int:
    if getattr(args, "format", "text") == "json":
        print(json.dumps({"error": kind, "message": str(exc), "exit_code": code}), file=sys.stderr)
    else:
        print(f"error ({kind}): {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except (UsageError, pipeline.ConfigInvalid, SchemaViolation, LLMUnavailable) as exc:
        return _emit_error(args, type(exc).__name__, exc, EXIT_USAGE)
    except pipeline.MissingInput as exc:
        return _emit_error(args, "MissingInput", exc, EXIT_DATA)
    except Exception as exc:  # noqa: BLE001 - anything else is a data/stage error
        return _emit_error(args, type(exc).__name__, exc, EXIT_DATA)
    if args.format == "json":
        print(json.dumps(result, indent=2, sort_keys=True, default=str))
    else:
        for key, value in result.items():
            print(f"{key}: {value}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
