"""The grading pipeline stages behind the CLI subcommands.

Stage boundaries match the files they exchange: extract writes a
transcript log, grade turns it into a run directory, evaluate reads a
run back and scores it against ground truth.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import yaml

from ..backend import (
    Backend,
    CachingBackend,
    ImagePart,
    ModelRequest,
    TextPart,
    build_backend,
)
from ..engine import (
    AGGREGATION_MEAN,
    DECISION_CAN_DECIDE,
    DECISION_CANNOT_DECIDE,
    DECISION_UNANSWERED,
    MODE_RUBRIC,
    TRANSCRIPTION_MAX_OUTPUT,
    AggregateGrade,
    CANNOT_DECIDE,
    GradeOutcome,
    SamplingPlan,
    aggregate_samples,
    generate_rule_variants,
    grade_answer,
)
from ..errors import (
    ConfigError,
    DegenerateSampleSetError,
    EmptySeriesError,
    UndefinedAlphaError,
)
from ..extract import (
    crop_regions,
    detect_empty,
    dissect_transcript,
    load_box_layout,
)
from ..metrics import (
    GradePairSeries,
    accuracy,
    build_contingency,
    contingency_metrics,
    krippendorff_alpha,
)
from ..model import (
    ExamSpec,
    PageImage,
    Rubric,
    Submission,
    Transcript,
    TranscriptSource,
    exam_to_dict,
    load_exam_config,
    points_str,
)
from ..prompt import render_transcription_prompt
from ..store import (
    RunStore,
    canonical_json,
    encode_record,
    enqueue_reviews,
    log_timestamp,
    sample_payload,
    task_payload,
    transcript_from_payload,
    transcript_payload,
    aggregate_payload,
)
from .config import RunConfig, WORKFLOW_BOX, load_ground_truth

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg"}


def build_backends(config: RunConfig, fixtures_override: str | None = None) -> dict[str, Backend]:
    """Instantiate every configured backend, with the response cache on
    remote kinds only; mocks are already deterministic and free."""
    backends: dict[str, Backend] = {}
    for backend_config in config.backends:
        if fixtures_override and backend_config.kind == "mock":
            backend_config = replace(backend_config, fixtures=fixtures_override)
        backend = build_backend(backend_config)
        if config.cache_dir is not None and backend_config.kind != "mock":
            backend = CachingBackend(backend, config.cache_dir)
        backends[backend_config.name] = backend
    return backends


def load_submissions(pages_dir: str | Path) -> list[Submission]:
    """Read scanned pages: one subdirectory per student, pages in name order."""
    pages_dir = Path(pages_dir)
    if not pages_dir.is_dir():
        raise ConfigError(f"pages directory not found: {pages_dir}")
    submissions: list[Submission] = []
    for student_dir in sorted(p for p in pages_dir.iterdir() if p.is_dir()):
        pages: list[PageImage] = []
        for index, file in enumerate(sorted(student_dir.iterdir())):
            media_type = IMAGE_SUFFIXES.get(file.suffix.lower())
            if media_type is None:
                continue
            pages.append(PageImage(index=index, data=file.read_bytes(), media_type=media_type))
        if pages:
            submissions.append(Submission(student_id=student_dir.name, pages=tuple(pages)))
    if not submissions:
        raise ConfigError(f"no student pages found under {pages_dir}")
    return submissions


def _transcribe_image(
    backend: Backend,
    image: PageImage,
    temperature: float,
    sample_index: int,
    question_text: str | None,
) -> str:
    system, context = render_transcription_prompt(question_text)
    parts: list[TextPart | ImagePart] = []
    if context is not None:
        parts.append(TextPart(context))
    parts.append(ImagePart(data=image.data, media_type=image.media_type))
    request = ModelRequest(
        backend_name=backend.name,
        system_prompt=system,
        user_parts=tuple(parts),
        temperature=temperature,
        max_output=TRANSCRIPTION_MAX_OUTPUT,
        request_tag="ocr",
    )
    return backend.complete(request, sample_index).text


def _extract_whole_page(
    config: RunConfig,
    exam: ExamSpec,
    backend: Backend,
    submission: Submission,
) -> list[Transcript]:
    transcripts: list[Transcript] = []
    for variant in range(config.plan.n_ocr_variants):
        page_texts = [
            _transcribe_image(backend, page, config.plan.ocr_temperature, variant, None)
            for page in submission.pages
        ]
        joined = "\n".join(page_texts)
        result = dissect_transcript(joined, exam, config.grammar)
        for problem_id in exam.problem_ids():
            text = result.answers.get(problem_id, "")
            if problem_id in result.missing:
                logger.warning(
                    "student %s variant %d: no solution marker for problem %s",
                    submission.student_id, variant, problem_id,
                )
            transcripts.append(
                Transcript(
                    student_id=submission.student_id,
                    problem_id=problem_id,
                    text=text,
                    empty=detect_empty(text),
                    source=TranscriptSource(
                        backend_name=backend.name,
                        temperature=config.plan.ocr_temperature,
                        variant_index=variant,
                    ),
                )
            )
    return transcripts


def _extract_boxes(
    config: RunConfig,
    exam: ExamSpec,
    backend: Backend,
    submission: Submission,
) -> list[Transcript]:
    assert config.layout_path is not None
    layout = load_box_layout(config.layout_path)
    texts: dict[str, list[str]] = {}
    for page in submission.pages:
        for problem_id, crop in crop_regions(page, layout):
            question = None
            if config.include_question_in_ocr:
                question = exam.problem(problem_id).question_text or None
            text = _transcribe_image(
                backend, crop, config.plan.ocr_temperature, 0, question
            )
            texts.setdefault(problem_id, []).append(text)
    transcripts: list[Transcript] = []
    for problem_id in exam.problem_ids():
        if problem_id not in texts:
            continue
        joined = "\n".join(texts[problem_id])
        transcripts.append(
            Transcript(
                student_id=submission.student_id,
                problem_id=problem_id,
                text=joined,
                empty=detect_empty(joined),
                source=TranscriptSource(
                    backend_name=backend.name,
                    temperature=config.plan.ocr_temperature,
                    variant_index=0,
                    with_question_context=config.include_question_in_ocr,
                ),
            )
        )
    return transcripts


@dataclass(frozen=True)
class ExtractSummary:
    n_students: int
    n_transcripts: int
    empty_by_problem: dict[str, tuple[int, int]]

    def table(self) -> str:
        lines = ["problem  answered  unrecognized/empty"]
        for problem_id, (empty, total) in self.empty_by_problem.items():
            share = 0.0 if total == 0 else empty / total
            lines.append(f"{problem_id:<8} {total - empty:>8}  {empty:>3} ({share:.0%})")
        return "\n".join(lines)


def extract_stage(
    config: RunConfig,
    pages_dir: str | Path,
    out_path: str | Path,
    fixtures_override: str | None = None,
) -> ExtractSummary:
    """Transcribe every submission and write the transcript log."""
    if config.workflow == WORKFLOW_BOX:
        if config.layout_path is None:
            raise ConfigError("box workflow requires a layout file")
        if config.plan.n_ocr_variants != 1:
            raise ConfigError("box workflow reads each region once; set n_ocr_variants to 1")
    exam, _rubrics = load_exam_config(config.exam_path)
    backend = build_backends(config, fixtures_override)[config.ocr_backend]
    submissions = load_submissions(pages_dir)

    all_transcripts: list[Transcript] = []
    for submission in submissions:
        if config.workflow == WORKFLOW_BOX:
            all_transcripts.extend(_extract_boxes(config, exam, backend, submission))
        else:
            all_transcripts.extend(_extract_whole_page(config, exam, backend, submission))

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as handle:
        for transcript in all_transcripts:
            handle.write(encode_record("transcript", transcript_payload(transcript)) + "\n")

    empty_by_problem: dict[str, tuple[int, int]] = {}
    for problem_id in exam.problem_ids():
        per_student: dict[str, bool] = {}
        for t in all_transcripts:
            if t.problem_id != problem_id:
                continue
            per_student[t.student_id] = per_student.get(t.student_id, True) and t.empty
        total = len(per_student)
        empty = sum(1 for is_empty in per_student.values() if is_empty)
        empty_by_problem[problem_id] = (empty, total)
    return ExtractSummary(
        n_students=len(submissions),
        n_transcripts=len(all_transcripts),
        empty_by_problem=empty_by_problem,
    )


def read_transcripts(path: str | Path) -> list[Transcript]:
    from ..store import _read_records

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"transcript log not found: {path}")
    warnings: list[str] = []
    transcripts = [
        transcript_from_payload(payload)
        for _line, kind, payload in _read_records(path, warnings)
        if kind == "transcript"
    ]
    for warning in warnings:
        logger.warning("%s: %s", path, warning)
    if not transcripts:
        raise ConfigError(f"no transcripts in {path}")
    return transcripts


@dataclass(frozen=True)
class GradeSummary:
    run_id: str
    n_items: int
    decided: int
    deferred: int
    unanswered: int
    open_tasks: int

    def table(self) -> str:
        return (
            f"run {self.run_id}: {self.n_items} items; "
            f"{self.decided} decided, {self.deferred} deferred, "
            f"{self.unanswered} unanswered; {self.open_tasks} review tasks"
        )


def grade_stage(
    config: RunConfig,
    transcripts_path: str | Path,
    run_id: str,
    fixtures_override: str | None = None,
    mode_override: str | None = None,
    format_override: str | None = None,
    review_unanswered: bool | None = None,
) -> GradeSummary:
    """Grade every transcribed item and persist a complete run."""
    exam, rubrics = load_exam_config(config.exam_path)
    backend = build_backends(config, fixtures_override)[config.grading_backend]
    transcripts = read_transcripts(transcripts_path)
    mode = mode_override or config.mode
    format_ = format_override or config.format
    review_blank = config.review_unanswered if review_unanswered is None else review_unanswered

    by_item: dict[tuple[str, str], list[Transcript]] = {}
    for transcript in transcripts:
        by_item.setdefault((transcript.student_id, transcript.problem_id), []).append(transcript)

    samples_out = []
    aggregates: list[AggregateGrade] = []
    for (student_id, problem_id) in sorted(by_item):
        problem = exam.problem(problem_id)
        rubric = rubrics.get(problem_id)
        if mode == MODE_RUBRIC and rubric is None:
            raise ConfigError(f"problem {problem_id}: no rubric defined but mode is rubric")
        variants = sorted(by_item[(student_id, problem_id)], key=lambda t: t.source.variant_index)
        try:
            outcome = grade_answer(
                variants,
                problem,
                rubric,
                config.plan,
                backend,
                mode=mode,
                format=format_,
                ignore_statement=config.ignore_statement,
            )
        except DegenerateSampleSetError as exc:
            logger.warning("%s/%s: %s; deferring to review", student_id, problem_id, exc)
            aggregates.append(
                AggregateGrade(
                    student_id=student_id,
                    problem_id=problem_id,
                    method=config.plan.aggregation,
                    n_samples=exc.valid,
                    dropped=exc.dropped,
                    decision=CANNOT_DECIDE,
                )
            )
            continue
        samples_out.extend(outcome.samples)
        aggregates.append(
            aggregate_samples(
                student_id, problem_id, outcome.samples, outcome.dropped, config.plan, problem
            )
        )

    tasks = enqueue_reviews(run_id, aggregates, review_blank)

    snapshot = {
        "run_id": run_id,
        "mode": mode,
        "format": format_,
        "config": dict(config.raw),
        "exam": exam_to_dict(exam, rubrics),
    }
    store = RunStore(config.runs_dir)
    with store.create_run(run_id, snapshot) as writer:
        writer.append("meta", {"run_id": run_id, "created_at": log_timestamp()})
        for transcript in transcripts:
            writer.append("transcript", transcript_payload(transcript))
        for sample in samples_out:
            writer.append("sample", sample_payload(sample))
        for aggregate in aggregates:
            writer.append("aggregate", aggregate_payload(aggregate))
        for task in tasks:
            writer.append("task", task_payload(task))

    kinds = [a.decision.kind for a in aggregates]
    return GradeSummary(
        run_id=run_id,
        n_items=len(aggregates),
        decided=kinds.count(DECISION_CAN_DECIDE),
        deferred=kinds.count(DECISION_CANNOT_DECIDE),
        unanswered=kinds.count(DECISION_UNANSWERED),
        open_tasks=len(tasks),
    )


def _problem_report(
    problem_id: str,
    aggregates: Sequence[AggregateGrade],
    truth: Mapping[tuple[str, str], Fraction],
    alpha_scale: str,
    score_unanswered_zero: bool,
) -> dict[str, Any]:
    pairs: list[tuple[Fraction, Fraction]] = []
    decision_items = []
    n_unanswered = 0
    counts = {DECISION_CAN_DECIDE: 0, DECISION_CANNOT_DECIDE: 0}
    for aggregate in aggregates:
        key = (aggregate.student_id, aggregate.problem_id)
        if key not in truth:
            continue
        expected = truth[key]
        if aggregate.decision.kind == DECISION_UNANSWERED:
            n_unanswered += 1
            if score_unanswered_zero:
                pairs.append((Fraction(0), expected))
            continue
        counts[aggregate.decision.kind] += 1
        if aggregate.snapped is not None:
            pairs.append((aggregate.snapped, expected))
        if aggregate.method == AGGREGATION_MEAN:
            decision_items.append((aggregate.decision, aggregate.snapped, expected))

    report: dict[str, Any] = {
        "problem_id": problem_id,
        "n_graded": len(pairs),
        "n_unanswered": n_unanswered,
        "accuracy": None,
        "alpha": None,
        "alpha_scale": alpha_scale,
        "confidence": None,
    }
    if pairs:
        series = GradePairSeries.from_values(pairs, alpha_scale)
        report["accuracy"] = accuracy(series)
        try:
            report["alpha"] = krippendorff_alpha(series)
        except (UndefinedAlphaError, EmptySeriesError):
            report["alpha"] = None
    if decision_items:
        table = build_contingency(decision_items)
        rates = contingency_metrics(table)
        decided_total = counts[DECISION_CAN_DECIDE] + counts[DECISION_CANNOT_DECIDE]
        report["confidence"] = {
            "true_positive": table.true_positive,
            "false_positive": table.false_positive,
            "false_negative": table.false_negative,
            "true_negative": table.true_negative,
            "accuracy": rates.accuracy,
            "precision": rates.precision,
            "recall": rates.recall,
            "f1": rates.f1,
            "fp_rate": rates.fp_rate,
            "positive_rate": (
                None
                if decided_total == 0
                else counts[DECISION_CAN_DECIDE] / decided_total
            ),
        }
    return report


def _fmt(value: float | None) -> str:
    return " n/a" if value is None else f"{value:.2f}"


def evaluate_run(
    runs_dir: str | Path,
    run_id: str,
    truth_path: str | Path,
    alpha_scale: str = "interval",
    score_unanswered_zero: bool = False,
) -> dict[str, Any]:
    """Score one run against ground truth, per problem and pooled."""
    store = RunStore(runs_dir)
    record = store.load_run(run_id)
    exam, _rubrics = record.exam()
    truth, truth_warnings = load_ground_truth(truth_path, exam)

    by_problem: dict[str, list[AggregateGrade]] = {}
    for aggregate in record.aggregates:
        by_problem.setdefault(aggregate.problem_id, []).append(aggregate)

    problems = [
        _problem_report(
            problem_id,
            by_problem.get(problem_id, []),
            truth,
            alpha_scale,
            score_unanswered_zero,
        )
        for problem_id in exam.problem_ids()
        if problem_id in by_problem
    ]
    overall = _problem_report(
        "overall",
        [a for aggregates in by_problem.values() for a in aggregates],
        truth,
        alpha_scale,
        score_unanswered_zero,
    )
    if overall["n_graded"] == 0 and overall["n_unanswered"] == 0:
        raise ConfigError("no comparable items between the run and the ground truth")
    return {
        "run_id": run_id,
        "alpha_scale": alpha_scale,
        "score_unanswered_zero": score_unanswered_zero,
        "problems": problems,
        "overall": overall,
        "truth_warnings": truth_warnings,
    }


def report_table(report: Mapping[str, Any]) -> str:
    header = (
        "problem   graded  blank   acc  alpha | conf-acc  prec   rec    f1  fp-rate  pos%"
    )
    lines = [header, "-" * len(header)]
    for row in [*report["problems"], report["overall"]]:
        confidence = row.get("confidence") or {}
        pos = confidence.get("positive_rate")
        lines.append(
            f"{row['problem_id']:<9} {row['n_graded']:>5}  {row['n_unanswered']:>5} "
            f"{_fmt(row['accuracy'])}  {_fmt(row['alpha'])} |"
            f" {_fmt(confidence.get('accuracy')):>8} {_fmt(confidence.get('precision')):>5}"
            f" {_fmt(confidence.get('recall')):>5} {_fmt(confidence.get('f1')):>5}"
            f" {_fmt(confidence.get('fp_rate')):>7}"
            f"  {' n/a' if pos is None else format(pos, '.0%'):>4}"
        )
    return "\n".join(lines)


def evaluate_stage(
    runs_dir: str | Path,
    run_id: str,
    truth_path: str | Path,
    alpha_scale: str = "interval",
    score_unanswered_zero: bool = False,
) -> tuple[dict[str, Any], str]:
    """Evaluate a run and persist the report next to its records."""
    report = evaluate_run(runs_dir, run_id, truth_path, alpha_scale, score_unanswered_zero)
    table = report_table(report)
    run_dir = Path(runs_dir) / run_id
    (run_dir / "report.json").write_text(canonical_json(report) + "\n", encoding="utf-8")
    (run_dir / "report.txt").write_text(table + "\n", encoding="utf-8")
    return report, table


def variants_stage(
    config: RunConfig,
    k: int,
    out_path: str | Path,
    fixtures_override: str | None = None,
) -> int:
    """Generate k rewordings per rubric rule and write the enriched exam."""
    exam, rubrics = load_exam_config(config.exam_path)
    backend = build_backends(config, fixtures_override)[config.grading_backend]
    enriched: dict[str, Rubric] = {}
    n_variants = 0
    for problem_id, rubric in sorted(rubrics.items()):
        new_rules = []
        for rule in rubric.rules:
            variants = generate_rule_variants(rule, k, backend, config.plan.grading_temperature)
            n_variants += len(variants)
            new_rules.append(replace(rule, paraphrases=tuple(v.text for v in variants)))
        enriched[problem_id] = replace(rubric, rules=tuple(new_rules))
    document = exam_to_dict(exam, enriched)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(
        yaml.safe_dump(document, sort_keys=False, allow_unicode=True), encoding="utf-8"
    )
    return n_variants
