"""Append-only run store.

A run directory holds a frozen config snapshot, a line-per-record log
with per-line checksums, and a derived index.  Records are never
rewritten; review resolutions are appended as new records, so the full
history of a run stays auditable.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .engine import (
    DECISION_CANNOT_DECIDE,
    DECISION_UNANSWERED,
    AggregateGrade,
    Decision,
    SampleGrade,
)
from .errors import (
    AlreadyResolvedError,
    InvalidPointsError,
    StoreError,
    StoreLockedError,
    UnknownTaskError,
    ValidationError,
)
from .model import (
    ExamSpec,
    Rubric,
    Transcript,
    TranscriptSource,
    exam_from_dict,
    points_str,
    to_points,
)
from .prompt import JudgementOutcome

logger = logging.getLogger(__name__)

FIXED_TIME_ENV = "RUBRICON_FIXED_TIME"

CONFIG_SNAPSHOT = "config.snapshot"
RECORDS_LOG = "records.log"
INDEX_FILE = "index"
LOCK_FILE = ".lock"

REASON_CANNOT_DECIDE = "cannot_decide"
REASON_PARSE_DROP = "parse_drop_exceeded"
REASON_UNANSWERED = "unanswered"

TASK_OPEN = "open"
TASK_RESOLVED = "resolved"


def log_timestamp() -> str:
    """Current UTC time, or the pinned value when reruns must be identical."""
    fixed = os.environ.get(FIXED_TIME_ENV)
    if fixed:
        return fixed
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def canonical_json(payload: Mapping[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _crc(payload_text: str) -> str:
    return format(zlib.crc32(payload_text.encode("utf-8")), "08x")


def encode_record(kind: str, payload: Mapping[str, Any]) -> str:
    payload_text = canonical_json(payload)
    line = json.dumps(
        {"kind": kind, "payload": json.loads(payload_text), "crc": _crc(payload_text)},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return line


def task_id_for(run_id: str, student_id: str, problem_id: str) -> str:
    """Deterministic, URL-safe review task id."""
    digest = hashlib.sha256(f"{run_id}\x1f{student_id}\x1f{problem_id}".encode("utf-8"))
    return digest.hexdigest()[:16]


@dataclass(frozen=True)
class ReviewTask:
    """One deferred item waiting for a human grade."""

    task_id: str
    run_id: str
    student_id: str
    problem_id: str
    reason: str
    created_at: str


@dataclass(frozen=True)
class Resolution:
    """A reviewer's final grade for one task."""

    task_id: str
    final_points: Fraction
    reviewer: str
    note: str
    resolved_at: str


def review_reason(aggregate: AggregateGrade, review_unanswered: bool) -> str | None:
    """Why an aggregate needs review, or None when it does not."""
    if aggregate.decision.kind == DECISION_CANNOT_DECIDE:
        if aggregate.drop_rate > Fraction(1, 5):
            return REASON_PARSE_DROP
        return REASON_CANNOT_DECIDE
    if aggregate.decision.kind == DECISION_UNANSWERED and review_unanswered:
        return REASON_UNANSWERED
    return None


def enqueue_reviews(
    run_id: str,
    aggregates: Sequence[AggregateGrade],
    review_unanswered: bool = False,
) -> list[ReviewTask]:
    """One open task per aggregate the pipeline refused to commit."""
    tasks: list[ReviewTask] = []
    created = log_timestamp()
    for aggregate in aggregates:
        reason = review_reason(aggregate, review_unanswered)
        if reason is None:
            continue
        tasks.append(
            ReviewTask(
                task_id=task_id_for(run_id, aggregate.student_id, aggregate.problem_id),
                run_id=run_id,
                student_id=aggregate.student_id,
                problem_id=aggregate.problem_id,
                reason=reason,
                created_at=created,
            )
        )
    return tasks


def transcript_payload(t: Transcript) -> dict[str, Any]:
    return {
        "student_id": t.student_id,
        "problem_id": t.problem_id,
        "text": t.text,
        "empty": t.empty,
        "source": {
            "backend_name": t.source.backend_name,
            "temperature": t.source.temperature,
            "variant_index": t.source.variant_index,
            "with_question_context": t.source.with_question_context,
        },
    }


def transcript_from_payload(payload: Mapping[str, Any]) -> Transcript:
    source = payload["source"]
    return Transcript(
        student_id=payload["student_id"],
        problem_id=payload["problem_id"],
        text=payload["text"],
        empty=bool(payload["empty"]),
        source=TranscriptSource(
            backend_name=source["backend_name"],
            temperature=float(source["temperature"]),
            variant_index=int(source["variant_index"]),
            with_question_context=bool(source["with_question_context"]),
        ),
    )


def sample_payload(s: SampleGrade) -> dict[str, Any]:
    return {
        "student_id": s.student_id,
        "problem_id": s.problem_id,
        "ocr_variant": s.ocr_variant,
        "run": s.run,
        "points": points_str(s.points),
        "mode": s.mode,
        "judgements": [
            {"rule_id": rule_id, "verdict": outcome.verdict, "explanation": outcome.explanation}
            for rule_id, outcome in s.rule_judgements
        ],
        "explanation": s.explanation,
    }


def sample_from_payload(payload: Mapping[str, Any]) -> SampleGrade:
    return SampleGrade(
        student_id=payload["student_id"],
        problem_id=payload["problem_id"],
        ocr_variant=int(payload["ocr_variant"]),
        run=int(payload["run"]),
        points=to_points(payload["points"]),
        mode=payload["mode"],
        rule_judgements=tuple(
            (j["rule_id"], JudgementOutcome(j["verdict"], j["explanation"]))
            for j in payload["judgements"]
        ),
        explanation=payload.get("explanation", ""),
    )


def aggregate_payload(a: AggregateGrade) -> dict[str, Any]:
    return {
        "student_id": a.student_id,
        "problem_id": a.problem_id,
        "method": a.method,
        "n_samples": a.n_samples,
        "dropped": a.dropped,
        "decision": {
            "kind": a.decision.kind,
            "value": None if a.decision.value is None else points_str(a.decision.value),
        },
        "mean": None if a.mean is None else points_str(a.mean),
        "sigma": a.sigma,
        "snapped": None if a.snapped is None else points_str(a.snapped),
        "tie_vote": a.tie_vote,
    }


def aggregate_from_payload(payload: Mapping[str, Any]) -> AggregateGrade:
    raw_decision = payload["decision"]
    decision = Decision(
        kind=raw_decision["kind"],
        value=None if raw_decision["value"] is None else to_points(raw_decision["value"]),
    )
    return AggregateGrade(
        student_id=payload["student_id"],
        problem_id=payload["problem_id"],
        method=payload["method"],
        n_samples=int(payload["n_samples"]),
        dropped=int(payload["dropped"]),
        decision=decision,
        mean=None if payload["mean"] is None else to_points(payload["mean"]),
        sigma=payload["sigma"],
        snapped=None if payload["snapped"] is None else to_points(payload["snapped"]),
        tie_vote=bool(payload["tie_vote"]),
    )


def task_payload(t: ReviewTask) -> dict[str, Any]:
    return {
        "task_id": t.task_id,
        "run_id": t.run_id,
        "student_id": t.student_id,
        "problem_id": t.problem_id,
        "reason": t.reason,
        "created_at": t.created_at,
    }


def task_from_payload(payload: Mapping[str, Any]) -> ReviewTask:
    return ReviewTask(
        task_id=payload["task_id"],
        run_id=payload["run_id"],
        student_id=payload["student_id"],
        problem_id=payload["problem_id"],
        reason=payload["reason"],
        created_at=payload["created_at"],
    )


def resolution_payload(r: Resolution) -> dict[str, Any]:
    return {
        "task_id": r.task_id,
        "final_points": points_str(r.final_points),
        "reviewer": r.reviewer,
        "note": r.note,
        "resolved_at": r.resolved_at,
    }


def resolution_from_payload(payload: Mapping[str, Any]) -> Resolution:
    return Resolution(
        task_id=payload["task_id"],
        final_points=to_points(payload["final_points"]),
        reviewer=payload["reviewer"],
        note=payload["note"],
        resolved_at=payload["resolved_at"],
    )


class _RunLock:
    """Single-writer lock: an exclusively created file in the run directory."""

    def __init__(self, run_dir: Path, timeout: float = 10.0):
        self._path = run_dir / LOCK_FILE
        self._timeout = timeout
        self._held = False

    def acquire(self) -> None:
        deadline = time.monotonic() + self._timeout
        while True:
            try:
                fd = os.open(self._path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if time.monotonic() >= deadline:
                    raise StoreLockedError(
                        f"another writer holds {self._path}"
                    ) from None
                time.sleep(0.05)
                continue
            with os.fdopen(fd, "w") as handle:
                handle.write(str(os.getpid()))
            self._held = True
            return

    def release(self) -> None:
        if self._held:
            try:
                self._path.unlink()
            except FileNotFoundError:
                pass
            self._held = False

    def __enter__(self) -> "_RunLock":
        self.acquire()
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.release()


class RunWriter:
    """Appends records to one run; hold it for the duration of a write burst."""

    def __init__(self, run_dir: Path, lock_timeout: float = 10.0):
        self._run_dir = run_dir
        self._lock = _RunLock(run_dir, timeout=lock_timeout)
        self._lock.acquire()
        self._handle = open(run_dir / RECORDS_LOG, "a", encoding="utf-8")

    def append(self, kind: str, payload: Mapping[str, Any]) -> None:
        self._handle.write(encode_record(kind, payload) + "\n")
        self._handle.flush()

    def close(self) -> None:
        try:
            self._handle.close()
        finally:
            self._lock.release()
        _write_index(self._run_dir)

    def __enter__(self) -> "RunWriter":
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.close()


@dataclass
class RunRecord:
    """Everything known about one run, reassembled from its directory."""

    run_id: str
    config: dict[str, Any]
    transcripts: list[Transcript] = field(default_factory=list)
    samples: list[SampleGrade] = field(default_factory=list)
    aggregates: list[AggregateGrade] = field(default_factory=list)
    tasks: list[ReviewTask] = field(default_factory=list)
    resolutions: list[Resolution] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def exam(self) -> tuple[ExamSpec, dict[str, Rubric]]:
        return exam_from_dict(self.config["exam"])

    def resolution_for(self, task_id: str) -> Resolution | None:
        for resolution in self.resolutions:
            if resolution.task_id == task_id:
                return resolution
        return None

    def task(self, task_id: str) -> ReviewTask:
        for task in self.tasks:
            if task.task_id == task_id:
                return task
        raise UnknownTaskError(task_id)

    def open_tasks(self) -> list[ReviewTask]:
        resolved = {r.task_id for r in self.resolutions}
        return [t for t in self.tasks if t.task_id not in resolved]

    def aggregate_for(self, student_id: str, problem_id: str) -> AggregateGrade | None:
        for aggregate in self.aggregates:
            if aggregate.student_id == student_id and aggregate.problem_id == problem_id:
                return aggregate
        return None

    def final_points(self, student_id: str, problem_id: str) -> Fraction | None:
        """Reviewer resolution wins; otherwise the committed decision value."""
        task_id = task_id_for(self.run_id, student_id, problem_id)
        resolution = self.resolution_for(task_id)
        if resolution is not None:
            return resolution.final_points
        aggregate = self.aggregate_for(student_id, problem_id)
        if aggregate is not None and aggregate.decision.value is not None:
            return aggregate.decision.value
        return None


class RunStore:
    """All runs under one directory tree."""

    def __init__(self, runs_dir: str | Path):
        self.runs_dir = Path(runs_dir)

    def run_dir(self, run_id: str) -> Path:
        if not run_id or "/" in run_id or run_id.startswith("."):
            raise ValidationError(f"run_id: unusable value {run_id!r}")
        return self.runs_dir / run_id

    def list_runs(self) -> list[str]:
        if not self.runs_dir.is_dir():
            return []
        return sorted(
            entry.name
            for entry in self.runs_dir.iterdir()
            if entry.is_dir() and (entry / CONFIG_SNAPSHOT).exists()
        )

    def create_run(self, run_id: str, config_snapshot: Mapping[str, Any]) -> RunWriter:
        run_dir = self.run_dir(run_id)
        run_dir.mkdir(parents=True, exist_ok=True)
        snapshot_path = run_dir / CONFIG_SNAPSHOT
        snapshot_path.write_text(canonical_json(config_snapshot) + "\n", encoding="utf-8")
        log_path = run_dir / RECORDS_LOG
        if log_path.exists():
            log_path.unlink()
        return RunWriter(run_dir)

    def writer(self, run_id: str, lock_timeout: float = 10.0) -> RunWriter:
        run_dir = self.run_dir(run_id)
        if not (run_dir / CONFIG_SNAPSHOT).exists():
            raise StoreError(f"run {run_id} does not exist under {self.runs_dir}")
        return RunWriter(run_dir, lock_timeout=lock_timeout)

    def load_run(self, run_id: str) -> RunRecord:
        run_dir = self.run_dir(run_id)
        snapshot_path = run_dir / CONFIG_SNAPSHOT
        if not snapshot_path.exists():
            raise StoreError(f"run {run_id} does not exist under {self.runs_dir}")
        try:
            config = json.loads(snapshot_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise StoreError(f"unreadable config snapshot for run {run_id}: {exc}") from exc

        record = RunRecord(run_id=run_id, config=config)
        log_path = run_dir / RECORDS_LOG
        if log_path.exists():
            for line_no, kind, payload in _read_records(log_path, record.warnings):
                try:
                    _apply_record(record, kind, payload)
                except (KeyError, TypeError, ValidationError) as exc:
                    record.warnings.append(f"line {line_no}: unusable {kind} record: {exc}")
        _check_references(record)
        _write_index(run_dir)
        return record

    def resolve_review(
        self,
        run_id: str,
        task_id: str,
        points: Any,
        reviewer: str,
        note: str = "",
    ) -> Resolution:
        """Record a reviewer's final grade for an open task.

        Validates the points against the problem's assignable grid and
        refuses double resolution; the winning record is the first one
        appended.
        """
        if not reviewer.strip():
            raise ValidationError("reviewer: must not be empty")
        record = self.load_run(run_id)
        task = record.task(task_id)
        existing = record.resolution_for(task_id)
        if existing is not None:
            raise AlreadyResolvedError(task_id, existing.reviewer)
        exam, _rubrics = record.exam()
        problem = exam.problem(task.problem_id)
        try:
            final = to_points(points, field_name="points")
        except ValidationError as exc:
            raise InvalidPointsError(str(exc)) from exc
        if final not in problem.assignable_points:
            grid = ", ".join(points_str(v) for v in problem.assignable_points)
            raise InvalidPointsError(
                f"points {points_str(final)} not assignable for problem "
                f"{task.problem_id} (grid: {grid})"
            )
        resolution = Resolution(
            task_id=task_id,
            final_points=final,
            reviewer=reviewer,
            note=note,
            resolved_at=log_timestamp(),
        )
        with self.writer(run_id) as writer:
            current = self.load_run(run_id).resolution_for(task_id)
            if current is not None:
                raise AlreadyResolvedError(task_id, current.reviewer)
            writer.append("resolution", resolution_payload(resolution))
        return resolution


def _read_records(
    log_path: Path, warnings: list[str]
) -> Iterator[tuple[int, str, dict[str, Any]]]:
    try:
        raw = log_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StoreError(f"unreadable record log {log_path}: {exc}") from exc
    lines = raw.split("\n")
    truncated_tail = not raw.endswith("\n")
    for line_no, line in enumerate(lines, start=1):
        if not line:
            continue
        if truncated_tail and line_no == len(lines):
            warnings.append(f"line {line_no}: truncated trailing record skipped")
            continue
        try:
            envelope = json.loads(line)
            kind = envelope["kind"]
            payload = envelope["payload"]
            crc = envelope["crc"]
        except (json.JSONDecodeError, KeyError, TypeError):
            warnings.append(f"line {line_no}: corrupt record skipped")
            continue
        if _crc(canonical_json(payload)) != crc:
            warnings.append(f"line {line_no}: checksum mismatch, record skipped")
            continue
        yield line_no, kind, payload


def _apply_record(record: RunRecord, kind: str, payload: dict[str, Any]) -> None:
    if kind == "meta":
        record.meta.update(payload)
    elif kind == "transcript":
        record.transcripts.append(transcript_from_payload(payload))
    elif kind == "sample":
        record.samples.append(sample_from_payload(payload))
    elif kind == "aggregate":
        record.aggregates.append(aggregate_from_payload(payload))
    elif kind == "task":
        record.tasks.append(task_from_payload(payload))
    elif kind == "resolution":
        record.resolutions.append(resolution_from_payload(payload))
    else:
        record.warnings.append(f"unknown record kind {kind!r} ignored")


def _check_references(record: RunRecord) -> None:
    transcript_keys = {
        (t.student_id, t.problem_id, t.source.variant_index) for t in record.transcripts
    }
    for sample in record.samples:
        key = (sample.student_id, sample.problem_id, sample.ocr_variant)
        if key not in transcript_keys:
            record.warnings.append(
                f"sample {key} has no matching transcript record"
            )


def _write_index(run_dir: Path) -> None:
    """Derived per-run index: record counts by kind plus the log size."""
    log_path = run_dir / RECORDS_LOG
    counts: dict[str, int] = {}
    size = 0
    if log_path.exists():
        size = log_path.stat().st_size
        scratch: list[str] = []
        for _line_no, kind, _payload in _read_records(log_path, scratch):
            counts[kind] = counts.get(kind, 0) + 1
    index = {"by_kind": counts, "log_bytes": size, "records": sum(counts.values())}
    try:
        (run_dir / INDEX_FILE).write_text(canonical_json(index) + "\n", encoding="utf-8")
    except OSError:
        logger.debug("index for %s not refreshed (read-only?)", run_dir)
