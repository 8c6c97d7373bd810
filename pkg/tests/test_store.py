from __future__ import annotations

import json
from fractions import Fraction

import pytest

from rubricon.engine import (
    AggregateGrade,
    CANNOT_DECIDE,
    SampleGrade,
    UNANSWERED,
    can_decide,
)
from rubricon.errors import (
    AlreadyResolvedError,
    InvalidPointsError,
    StoreError,
    StoreLockedError,
    UnknownTaskError,
    ValidationError,
)
from rubricon.model import Transcript, TranscriptSource, exam_to_dict, load_exam_config
from rubricon.prompt import JudgementOutcome
from rubricon.store import (
    CONFIG_SNAPSHOT,
    REASON_CANNOT_DECIDE,
    REASON_PARSE_DROP,
    REASON_UNANSWERED,
    RECORDS_LOG,
    RunStore,
    aggregate_from_payload,
    aggregate_payload,
    enqueue_reviews,
    encode_record,
    review_reason,
    sample_from_payload,
    sample_payload,
    task_id_for,
    transcript_from_payload,
    transcript_payload,
)

EXAM_YAML = """\
exam_id: demo
problems:
  - id: "1"
    question: Solve x^2 - 5x + 6 = 0.
    max_points: 2
    assignable: [0, 0.5, 1, 1.5, 2]
"""


def _transcript() -> Transcript:
    return Transcript(
        student_id="s01",
        problem_id="1",
        text="x = 2 and x = 3",
        source=TranscriptSource(backend_name="mock", temperature=0.7, variant_index=0),
    )


def _sample() -> SampleGrade:
    return SampleGrade(
        student_id="s01",
        problem_id="1",
        ocr_variant=0,
        run=3,
        points=Fraction(3, 2),
        mode="rubric",
        rule_judgements=(("r1", JudgementOutcome("yes", "Root given.")),),
    )


def _aggregate(decision=CANNOT_DECIDE, dropped=0, n_samples=5) -> AggregateGrade:
    return AggregateGrade(
        student_id="s01",
        problem_id="1",
        method="mean",
        n_samples=n_samples,
        dropped=dropped,
        decision=decision,
        mean=Fraction(6, 5),
        sigma=0.447,
        snapped=Fraction(1),
    )


def _snapshot(tmp_path) -> dict:
    exam_path = tmp_path / "exam.yaml"
    exam_path.write_text(EXAM_YAML, encoding="utf-8")
    exam, rubrics = load_exam_config(exam_path)
    return {"run_id": "run1", "exam": exam_to_dict(exam, rubrics)}


def test_payload_round_trips_are_exact():
    transcript = _transcript()
    assert transcript_from_payload(transcript_payload(transcript)) == transcript
    sample = _sample()
    assert sample_from_payload(sample_payload(sample)) == sample
    for aggregate in (
        _aggregate(),
        _aggregate(decision=can_decide(Fraction(1))),
        AggregateGrade(
            student_id="s02", problem_id="1", method="majority",
            n_samples=5, dropped=0, decision=can_decide(Fraction(2)),
            snapped=Fraction(2), tie_vote=True,
        ),
    ):
        assert aggregate_from_payload(aggregate_payload(aggregate)) == aggregate


def test_task_id_is_deterministic_and_distinct():
    a = task_id_for("run1", "s01", "1")
    assert a == task_id_for("run1", "s01", "1")
    assert a != task_id_for("run1", "s01", "2")
    assert a != task_id_for("run2", "s01", "1")
    assert len(a) == 16


def test_review_reason_by_aggregate_state():
    assert review_reason(_aggregate(), False) == REASON_CANNOT_DECIDE
    noisy = _aggregate(dropped=3, n_samples=5)
    assert review_reason(noisy, False) == REASON_PARSE_DROP
    committed = _aggregate(decision=can_decide(Fraction(1)))
    assert review_reason(committed, False) is None
    blank = AggregateGrade(
        student_id="s01", problem_id="1", method="mean",
        n_samples=0, dropped=0, decision=UNANSWERED,
    )
    assert review_reason(blank, False) is None
    assert review_reason(blank, True) == REASON_UNANSWERED


def test_enqueue_reviews_builds_tasks_for_deferred_items(monkeypatch):
    monkeypatch.setenv("RUBRICON_FIXED_TIME", "2026-01-01T00:00:00+00:00")
    committed = _aggregate(decision=can_decide(Fraction(1)))
    tasks = enqueue_reviews("run1", [_aggregate(), committed])
    assert len(tasks) == 1
    task = tasks[0]
    assert task.task_id == task_id_for("run1", "s01", "1")
    assert task.reason == REASON_CANNOT_DECIDE
    assert task.created_at == "2026-01-01T00:00:00+00:00"


def test_store_create_write_load_round_trip(tmp_path):
    store = RunStore(tmp_path / "runs")
    with store.create_run("run1", _snapshot(tmp_path)) as writer:
        writer.append("meta", {"run_id": "run1", "created_at": "t0"})
        writer.append("transcript", transcript_payload(_transcript()))
        writer.append("sample", sample_payload(_sample()))
        writer.append("aggregate", aggregate_payload(_aggregate()))
    record = store.load_run("run1")
    assert record.meta["run_id"] == "run1"
    assert record.transcripts == [_transcript()]
    assert record.samples == [_sample()]
    assert record.aggregates == [_aggregate()]
    assert record.warnings == []
    assert store.list_runs() == ["run1"]
    exam, _rubrics = record.exam()
    assert exam.problem_ids() == ("1",)


def test_store_skips_corrupt_and_truncated_records(tmp_path):
    store = RunStore(tmp_path / "runs")
    with store.create_run("run1", _snapshot(tmp_path)) as writer:
        writer.append("transcript", transcript_payload(_transcript()))
        writer.append("sample", sample_payload(_sample()))
    log_path = store.run_dir("run1") / RECORDS_LOG
    lines = log_path.read_text(encoding="utf-8").splitlines()
    corrupted = json.loads(lines[1])
    corrupted["payload"]["points"] = "2"
    lines[1] = json.dumps(corrupted, sort_keys=True, separators=(",", ":"))
    log_path.write_text(
        "\n".join(lines) + "\n" + "not json at all\n" + '{"kind":"meta","payload":{"x"',
        encoding="utf-8",
    )
    record = store.load_run("run1")
    assert record.transcripts == [_transcript()]
    assert record.samples == []
    assert any("checksum mismatch" in w for w in record.warnings)
    assert any("corrupt record" in w for w in record.warnings)
    assert any("truncated trailing record" in w for w in record.warnings)


def test_store_notes_samples_without_transcripts(tmp_path):
    store = RunStore(tmp_path / "runs")
    with store.create_run("run1", _snapshot(tmp_path)) as writer:
        writer.append("sample", sample_payload(_sample()))
    record = store.load_run("run1")
    assert any("no matching transcript" in w for w in record.warnings)


def test_store_second_writer_times_out(tmp_path):
    store = RunStore(tmp_path / "runs")
    writer = store.create_run("run1", _snapshot(tmp_path))
    try:
        with pytest.raises(StoreLockedError):
            store.writer("run1", lock_timeout=0.2)
    finally:
        writer.close()
    with store.writer("run1") as second:
        second.append("meta", {"reopened": True})


def test_store_unknown_run_and_bad_run_ids(tmp_path):
    store = RunStore(tmp_path / "runs")
    with pytest.raises(StoreError):
        store.load_run("ghost")
    with pytest.raises(ValidationError):
        store.run_dir("../escape")
    with pytest.raises(ValidationError):
        store.run_dir(".hidden")
    assert store.list_runs() == []


def test_store_index_counts_records(tmp_path):
    store = RunStore(tmp_path / "runs")
    with store.create_run("run1", _snapshot(tmp_path)) as writer:
        writer.append("transcript", transcript_payload(_transcript()))
        writer.append("transcript", transcript_payload(_transcript()))
        writer.append("aggregate", aggregate_payload(_aggregate()))
    index = json.loads((store.run_dir("run1") / "index").read_text(encoding="utf-8"))
    assert index["by_kind"] == {"aggregate": 1, "transcript": 2}
    assert index["records"] == 3


def _store_with_open_task(tmp_path) -> RunStore:
    store = RunStore(tmp_path / "runs")
    aggregate = _aggregate()
    with store.create_run("run1", _snapshot(tmp_path)) as writer:
        writer.append("aggregate", aggregate_payload(aggregate))
        for task in enqueue_reviews("run1", [aggregate]):
            writer.append(
                "task",
                {
                    "task_id": task.task_id,
                    "run_id": task.run_id,
                    "student_id": task.student_id,
                    "problem_id": task.problem_id,
                    "reason": task.reason,
                    "created_at": task.created_at,
                },
            )
    return store


def test_resolve_review_happy_path(tmp_path):
    store = _store_with_open_task(tmp_path)
    task_id = task_id_for("run1", "s01", "1")
    resolution = store.resolve_review("run1", task_id, "1.5", "alex", note="Partial credit.")
    assert resolution.final_points == Fraction(3, 2)
    record = store.load_run("run1")
    assert record.open_tasks() == []
    assert record.final_points("s01", "1") == Fraction(3, 2)
    assert record.resolution_for(task_id).reviewer == "alex"


def test_resolve_review_rejects_double_resolution(tmp_path):
    store = _store_with_open_task(tmp_path)
    task_id = task_id_for("run1", "s01", "1")
    store.resolve_review("run1", task_id, 1, "alex")
    with pytest.raises(AlreadyResolvedError):
        store.resolve_review("run1", task_id, 2, "blake")
    assert store.load_run("run1").resolution_for(task_id).reviewer == "alex"


def test_resolve_review_rejects_off_grid_points(tmp_path):
    store = _store_with_open_task(tmp_path)
    task_id = task_id_for("run1", "s01", "1")
    with pytest.raises(InvalidPointsError):
        store.resolve_review("run1", task_id, "0.75", "alex")
    with pytest.raises(InvalidPointsError):
        store.resolve_review("run1", task_id, "not a number", "alex")
    assert store.load_run("run1").open_tasks() != []


def test_resolve_review_unknown_task_and_blank_reviewer(tmp_path):
    store = _store_with_open_task(tmp_path)
    with pytest.raises(UnknownTaskError):
        store.resolve_review("run1", "feedfeedfeedfeed", 1, "alex")
    with pytest.raises(ValidationError):
        store.resolve_review("run1", task_id_for("run1", "s01", "1"), 1, "   ")


def test_final_points_prefers_committed_decision_without_resolution(tmp_path):
    store = RunStore(tmp_path / "runs")
    committed = AggregateGrade(
        student_id="s02", problem_id="1", method="mean",
        n_samples=5, dropped=0, decision=can_decide(Fraction(2)),
        mean=Fraction(2), sigma=0.0, snapped=Fraction(2),
    )
    with store.create_run("run1", _snapshot(tmp_path)) as writer:
        writer.append("aggregate", aggregate_payload(committed))
    record = store.load_run("run1")
    assert record.final_points("s02", "1") == Fraction(2)
    assert record.final_points("s03", "1") is None


def test_fixed_time_pins_log_bytes(tmp_path, monkeypatch):
    monkeypatch.setenv("RUBRICON_FIXED_TIME", "2026-01-01T00:00:00+00:00")

    def run_once(root):
        store = RunStore(root / "runs")
        aggregate = _aggregate()
        with store.create_run("run1", _snapshot(root)) as writer:
            writer.append("aggregate", aggregate_payload(aggregate))
            for task in enqueue_reviews("run1", [aggregate]):
                writer.append("task", {
                    "task_id": task.task_id, "run_id": task.run_id,
                    "student_id": task.student_id, "problem_id": task.problem_id,
                    "reason": task.reason, "created_at": task.created_at,
                })
        return (store.run_dir("run1") / RECORDS_LOG).read_bytes()

    first_root = tmp_path / "a"
    second_root = tmp_path / "b"
    first_root.mkdir()
    second_root.mkdir()
    assert run_once(first_root) == run_once(second_root)


def test_encode_record_is_canonical():
    one = encode_record("meta", {"b": 1, "a": 2})
    two = encode_record("meta", {"a": 2, "b": 1})
    assert one == two
    envelope = json.loads(one)
    assert set(envelope) == {"kind", "payload", "crc"}
