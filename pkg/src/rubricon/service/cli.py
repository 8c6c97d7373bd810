"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input problems, 2 backend
failures.  Everything else is a bug and raises.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import BackendError, RubriconError
from ..metrics import SCALES
from .. import prompt
from . import pipeline
from .config import WORKFLOWS, load_run_config

logger = logging.getLogger(__name__)

PROMPT_EXPORTS = {
    "transcription_system.txt": prompt.TRANSCRIPTION_SYSTEM,
    "transcription_question_context.txt": prompt.QUESTION_CONTEXT_TEMPLATE,
    "judgement_verbalized.txt": prompt.judgement_system("verbalized", True),
    "judgement_verbalized_no_ignore.txt": prompt.judgement_system("verbalized", False),
    "judgement_mcq.txt": prompt.judgement_system("mcq", True),
    "judgement_user.txt": prompt.RULE_USER_TEMPLATE,
    "free_system.txt": prompt.FREE_SYSTEM,
    "free_user.txt": prompt.FREE_USER_TEMPLATE,
    "paraphrase.txt": prompt.PARAPHRASE_INSTRUCTION,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rubricon",
        description="Sampled grading of handwritten-exam transcripts with review routing.",
    )
    parser.add_argument("--verbose", action="store_true", help="log at debug level")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_config(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", required=True, help="run config YAML")
        sub.add_argument("--backend", help="backend name override for this stage")
        sub.add_argument("--mock-fixtures", help="fixtures directory for mock backends")

    extract = commands.add_parser("extract", help="transcribe scanned pages")
    add_config(extract)
    extract.add_argument("--pages", required=True, help="directory of per-student page images")
    extract.add_argument("--out", default="transcripts.jsonl", help="transcript log to write")
    extract.add_argument("--workflow", choices=WORKFLOWS, help="override the configured workflow")

    grade = commands.add_parser("grade", help="grade a transcript log into a run")
    add_config(grade)
    grade.add_argument("--transcripts", required=True, help="transcript log from extract")
    grade.add_argument("--run", required=True, help="run id to create")
    grade.add_argument("--mode", choices=("rubric", "free"), help="override grading mode")
    grade.add_argument("--format", choices=("verbalized", "mcq"), help="override judgement format")
    grade.add_argument(
        "--review-unanswered",
        action="store_true",
        help="also queue unanswered items for review",
    )

    evaluate = commands.add_parser("evaluate", help="score a run against ground truth")
    evaluate.add_argument("--config", required=True, help="run config YAML")
    evaluate.add_argument("--run", required=True, help="run id to evaluate")
    evaluate.add_argument("--truth", required=True, help="ground truth YAML")
    evaluate.add_argument("--alpha-scale", choices=SCALES, default="interval")
    evaluate.add_argument(
        "--score-unanswered-zero",
        action="store_true",
        help="score blank answers as zero instead of excluding them",
    )

    variants = commands.add_parser("variants", help="generate reworded rubric rules")
    add_config(variants)
    variants.add_argument("-k", type=int, default=5, help="variants per rule")
    variants.add_argument("--out", required=True, help="enriched exam YAML to write")

    serve = commands.add_parser("serve", help="serve the review API and console")
    serve.add_argument("--config", required=True, help="run config YAML")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--truth", help="ground truth YAML for /report")
    serve.add_argument("--ui-dir", help="directory of built console assets")
    serve.add_argument("--alpha-scale", choices=SCALES, default="interval")

    dump = commands.add_parser("dump-prompts", help="write the prompt templates to files")
    dump.add_argument("--out", default="docs/prompts", help="directory to write into")

    return parser


def _cmd_extract(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    if args.workflow:
        config = replace(config, workflow=args.workflow)
    if args.backend:
        config = replace(config, ocr_backend=args.backend)
    summary = pipeline.extract_stage(config, args.pages, args.out, args.mock_fixtures)
    print(summary.table())
    print(f"wrote {summary.n_transcripts} transcripts to {args.out}")
    return 0


def _cmd_grade(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    if args.backend:
        config = replace(config, grading_backend=args.backend)
    summary = pipeline.grade_stage(
        config,
        args.transcripts,
        args.run,
        fixtures_override=args.mock_fixtures,
        mode_override=args.mode,
        format_override=args.format,
        review_unanswered=True if args.review_unanswered else None,
    )
    print(summary.table())
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    report, table = pipeline.evaluate_stage(
        config.runs_dir,
        args.run,
        args.truth,
        alpha_scale=args.alpha_scale,
        score_unanswered_zero=args.score_unanswered_zero,
    )
    print(table)
    print(f"report written to {Path(config.runs_dir) / args.run / 'report.json'}")
    return 0


def _cmd_variants(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    if args.backend:
        config = replace(config, grading_backend=args.backend)
    count = pipeline.variants_stage(config, args.k, args.out, args.mock_fixtures)
    print(f"wrote {count} rule variants to {args.out}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .api import create_app

    config = load_run_config(args.config)
    app = create_app(
        runs_dir=config.runs_dir,
        truth_path=args.truth,
        ui_dir=args.ui_dir,
        alpha_scale=args.alpha_scale,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _cmd_dump_prompts(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in PROMPT_EXPORTS.items():
        (out / name).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {out / name}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "extract": _cmd_extract,
        "grade": _cmd_grade,
        "evaluate": _cmd_evaluate,
        "variants": _cmd_variants,
        "serve": _cmd_serve,
        "dump-prompts": _cmd_dump_prompts,
    }
    try:
        return handlers[args.command](args)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 2
    except RubriconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
