"""HTTP review service.

Serves the stored runs read-only plus one write operation: resolving a
review task with a final grade.  Every non-2xx reply uses one error
shape so clients can render failures uniformly.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Mapping

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from ..engine import AggregateGrade, DECISION_CANNOT_DECIDE
from ..errors import (
    AlreadyResolvedError,
    InvalidPointsError,
    RubriconError,
    StoreError,
    UnknownTaskError,
    ValidationError,
)
from ..model import ExamSpec, Rubric, points_str
from ..store import Resolution, ReviewTask, RunRecord, RunStore, TASK_OPEN, TASK_RESOLVED
from .pipeline import evaluate_run

logger = logging.getLogger(__name__)

FALLBACK_PAGE = """<!doctype html>
<meta charset="utf-8">
<title>review console</title>
<style>body{font-family:system-ui;margin:3rem auto;max-width:38rem;color:#333}</style>
<h1>Review console not built</h1>
<p>The static console assets were not found. Build them first:</p>
<pre>cd frontend &amp;&amp; npm install &amp;&amp; npm run build</pre>
<p>then restart <code>rubricon serve</code> with <code>--ui-dir frontend/dist</code>.
The JSON API is live under <a href="/api/runs">/api/runs</a>.</p>
"""


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"status": status, "code": code, "message": message},
    )


def _aggregate_view(aggregate: AggregateGrade | None) -> dict[str, Any]:
    if aggregate is None:
        return {}
    return {
        "method": aggregate.method,
        "n_samples": aggregate.n_samples,
        "dropped": aggregate.dropped,
        "mean": None if aggregate.mean is None else float(aggregate.mean),
        "mean_exact": None if aggregate.mean is None else points_str(aggregate.mean),
        "sigma": aggregate.sigma,
        "snapped": None if aggregate.snapped is None else points_str(aggregate.snapped),
        "decision": {
            "kind": aggregate.decision.kind,
            "value": None
            if aggregate.decision.value is None
            else points_str(aggregate.decision.value),
        },
        "tie_vote": aggregate.tie_vote,
    }


def _task_view(
    record: RunRecord,
    task: ReviewTask,
    exam: ExamSpec,
) -> dict[str, Any]:
    resolution = record.resolution_for(task.task_id)
    aggregate = record.aggregate_for(task.student_id, task.problem_id)
    problem = exam.problem(task.problem_id)
    final = record.final_points(task.student_id, task.problem_id)
    view: dict[str, Any] = {
        "task_id": task.task_id,
        "run_id": task.run_id,
        "student_id": task.student_id,
        "problem_id": task.problem_id,
        "reason": task.reason,
        "created_at": task.created_at,
        "status": TASK_RESOLVED if resolution else TASK_OPEN,
        "max_points": points_str(problem.max_points),
        "assignable": [points_str(v) for v in problem.assignable_points],
        "aggregate": _aggregate_view(aggregate),
        "final_points": None if final is None else points_str(final),
    }
    if resolution:
        view["resolution"] = {
            "final_points": points_str(resolution.final_points),
            "reviewer": resolution.reviewer,
            "note": resolution.note,
            "resolved_at": resolution.resolved_at,
        }
    return view


def _task_detail(record: RunRecord, task: ReviewTask, exam: ExamSpec, rubrics: Mapping[str, Rubric]) -> dict[str, Any]:
    view = _task_view(record, task, exam)
    problem = exam.problem(task.problem_id)
    view["question_text"] = problem.question_text
    view["transcripts"] = [
        {
            "variant_index": t.source.variant_index,
            "text": t.text,
            "empty": t.empty,
            "backend_name": t.source.backend_name,
        }
        for t in sorted(
            (
                t
                for t in record.transcripts
                if t.student_id == task.student_id and t.problem_id == task.problem_id
            ),
            key=lambda t: t.source.variant_index,
        )
    ]
    rubric = rubrics.get(task.problem_id)
    rule_texts = {}
    if rubric is not None:
        view["rules"] = [
            {
                "rule_id": rule.rule_id,
                "text": rule.text,
                "points": points_str(rule.points),
                "group": rule.group,
            }
            for rule in rubric.rules
        ]
        rule_texts = {rule.rule_id: rule.text for rule in rubric.rules}
    else:
        view["rules"] = []
    view["samples"] = [
        {
            "ocr_variant": s.ocr_variant,
            "run": s.run,
            "points": points_str(s.points),
            "mode": s.mode,
            "explanation": s.explanation,
            "judgements": [
                {
                    "rule_id": rule_id,
                    "rule_text": rule_texts.get(rule_id, ""),
                    "verdict": outcome.verdict,
                    "explanation": outcome.explanation,
                }
                for rule_id, outcome in s.rule_judgements
            ],
        }
        for s in sorted(
            (
                s
                for s in record.samples
                if s.student_id == task.student_id and s.problem_id == task.problem_id
            ),
            key=lambda s: (s.ocr_variant, s.run),
        )
    ]
    return view


def create_app(
    runs_dir: str | Path,
    truth_path: str | Path | None = None,
    ui_dir: str | Path | None = None,
    alpha_scale: str = "interval",
) -> FastAPI:
    store = RunStore(runs_dir)
    app = FastAPI(title="rubricon review service", docs_url=None, redoc_url=None)

    @app.exception_handler(RubriconError)
    async def domain_error(_request: Request, exc: RubriconError) -> JSONResponse:
        if isinstance(exc, (UnknownTaskError,)):
            return _error(404, "not_found", str(exc))
        if isinstance(exc, AlreadyResolvedError):
            return _error(409, "already_resolved", str(exc))
        if isinstance(exc, (InvalidPointsError, ValidationError)):
            return _error(422, "invalid_points", str(exc))
        if isinstance(exc, StoreError):
            return _error(404, "not_found", str(exc))
        logger.exception("unhandled domain error")
        return _error(500, "internal", str(exc))

    @app.exception_handler(RequestValidationError)
    async def body_error(_request: Request, exc: RequestValidationError) -> JSONResponse:
        return _error(422, "invalid_body", str(exc.errors()[:1]))

    def _load(run_id: str) -> tuple[RunRecord, ExamSpec, dict[str, Rubric]]:
        record = store.load_run(run_id)
        exam, rubrics = record.exam()
        return record, exam, rubrics

    def _find_task(task_id: str) -> tuple[RunRecord, ExamSpec, dict[str, Rubric], ReviewTask]:
        for run_id in store.list_runs():
            record, exam, rubrics = _load(run_id)
            for task in record.tasks:
                if task.task_id == task_id:
                    return record, exam, rubrics, task
        raise UnknownTaskError(task_id)

    @app.get("/api/runs")
    def list_runs() -> list[dict[str, Any]]:
        runs = []
        for run_id in store.list_runs():
            record, _exam, _rubrics = _load(run_id)
            kinds = [a.decision.kind for a in record.aggregates]
            runs.append(
                {
                    "run_id": run_id,
                    "created_at": record.meta.get("created_at"),
                    "n_items": len(record.aggregates),
                    "n_deferred": kinds.count(DECISION_CANNOT_DECIDE),
                    "n_tasks": len(record.tasks),
                    "n_open_tasks": len(record.open_tasks()),
                }
            )
        return runs

    @app.get("/api/runs/{run_id}/queue")
    def run_queue(run_id: str, include_resolved: bool = False) -> dict[str, Any]:
        record, exam, _rubrics = _load(run_id)
        tasks = record.tasks if include_resolved else record.open_tasks()
        return {
            "run_id": run_id,
            "tasks": [_task_view(record, task, exam) for task in tasks],
        }

    @app.get("/api/tasks/{task_id}")
    def task_detail(task_id: str) -> dict[str, Any]:
        record, exam, rubrics, task = _find_task(task_id)
        return _task_detail(record, task, exam, rubrics)

    @app.post("/api/tasks/{task_id}/resolve")
    def resolve_task(task_id: str, body: dict[str, Any]) -> dict[str, Any]:
        record, _exam, _rubrics, task = _find_task(task_id)
        if "points" not in body:
            raise ValidationError("points: required")
        reviewer = str(body.get("reviewer", "")).strip()
        if not reviewer:
            raise ValidationError("reviewer: required")
        resolution = store.resolve_review(
            run_id=task.run_id,
            task_id=task_id,
            points=body["points"],
            reviewer=reviewer,
            note=str(body.get("note", "")),
        )
        updated, exam, rubrics = _load(task.run_id)
        return _task_view(updated, updated.task(task_id), exam)

    @app.get("/api/runs/{run_id}/report")
    def run_report(run_id: str) -> dict[str, Any]:
        store.load_run(run_id)
        if truth_path is None:
            raise StoreError("no ground truth loaded; start serve with --truth")
        return evaluate_run(runs_dir, run_id, truth_path, alpha_scale)

    ui = None if ui_dir is None else Path(ui_dir)
    if ui is not None and ui.is_dir():
        app.mount("/", StaticFiles(directory=ui, html=True), name="console")
    else:

        @app.get("/", response_class=HTMLResponse)
        def fallback() -> str:
            return FALLBACK_PAGE

    return app
