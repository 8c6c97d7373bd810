from __future__ import annotations

import json
import random
import shutil
import socket
import time
from fractions import Fraction
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from rubricon.engine import SamplingPlan, grade_answer, sigma_decision
from rubricon.errors import UndefinedAlphaError
from rubricon.extract import dissect_transcript
from rubricon.fixtures import FixtureSet, judgement_reply
from rubricon.metrics import (
    ContingencyTable,
    GradePairSeries,
    contingency_metrics,
    krippendorff_alpha,
    robustness_alpha,
)
from rubricon.model import (
    ExamSpec,
    GradingRule,
    ProblemSpec,
    Rubric,
    ScoreCombinator,
    Transcript,
    TranscriptSource,
    snap_to_assignable,
)
from rubricon.prompt import (
    FORMAT_MCQ,
    render_free_prompt,
    render_paraphrase_prompt,
    render_rule_prompt,
    render_transcription_prompt,
)
from rubricon.service import pipeline
from rubricon.service.api import create_app
from rubricon.service.cli import main
from rubricon.service.config import load_run_config
from rubricon.store import FIXED_TIME_ENV, RunStore

from oracles import agreement_alpha_bruteforce

GOLDEN = Path(__file__).parent / "golden"
DEMO_DIR = Path(__file__).resolve().parent.parent / "fixtures" / "mock_exam"
HALF_GRID = tuple(Fraction(k, 2) for k in range(5))


def _golden(name: str) -> str:
    text = (GOLDEN / name).read_text(encoding="utf-8")
    assert text.endswith("\n")
    return text[:-1]


def test_confidence_rule_decides_the_worked_triple():
    start = time.perf_counter()
    tight = sigma_decision(1.21, 0.13, HALF_GRID)
    assert tight.kind == "can_decide"
    assert tight.value == Fraction(1)
    medium = sigma_decision(1.21, 0.23, HALF_GRID)
    assert medium.kind == "can_decide"
    assert medium.value == Fraction(1)
    wide = sigma_decision(1.21, 0.31, HALF_GRID)
    assert wide.kind == "cannot_decide"
    assert wide.value is None
    assert time.perf_counter() - start < 1.0


def test_reference_decision_table_metrics():
    start = time.perf_counter()
    table = ContingencyTable(
        true_positive=68, false_positive=17, false_negative=0, true_negative=15
    )
    metrics = contingency_metrics(table)
    assert metrics.accuracy == pytest.approx(0.83, abs=0.005)
    assert metrics.precision == pytest.approx(0.80, abs=0.005)
    assert metrics.recall == pytest.approx(1.00, abs=0.005)
    assert metrics.f1 == pytest.approx(0.89, abs=0.005)
    assert metrics.fp_rate == pytest.approx(0.17, abs=0.005)
    assert time.perf_counter() - start < 1.0


def test_agreement_alpha_reference_values_and_randomized_oracle():
    start = time.perf_counter()
    identical = [(0, 0), (1, 1), (2, 2), (1, 1)]
    for scale in ("nominal", "interval"):
        assert krippendorff_alpha(GradePairSeries.from_values(identical, scale=scale)) == 1.0
    crossed = GradePairSeries.from_values([(0, 1), (1, 0)], scale="nominal")
    assert krippendorff_alpha(crossed) == -0.5

    rng = random.Random(90210)
    checked = 0
    for case in range(500):
        n = rng.randint(2, 50)
        scale = "nominal" if case % 2 == 0 else "interval"
        pairs = [(rng.randint(0, 4), rng.randint(0, 4)) for _ in range(n)]
        series = GradePairSeries.from_values(pairs, scale=scale)
        try:
            expected = agreement_alpha_bruteforce(
                [[float(a), float(b)] for a, b in pairs], scale
            )
        except ZeroDivisionError:
            with pytest.raises(UndefinedAlphaError):
                krippendorff_alpha(series)
            continue
        assert krippendorff_alpha(series) == pytest.approx(expected, abs=1e-9)
        checked += 1
    assert checked > 450
    assert time.perf_counter() - start < 10.0


def test_interval_alpha_is_affine_invariant():
    rng = random.Random(555)
    for _ in range(100):
        n = rng.randint(2, 30)
        pairs = tuple(
            (Fraction(rng.randint(0, 8), 2), Fraction(rng.randint(0, 8), 2))
            for _ in range(n)
        )
        scale_by = Fraction(rng.randint(1, 9), rng.randint(1, 4))
        shift_by = Fraction(rng.randint(-9, 9), rng.randint(1, 4))
        mapped = tuple(
            (scale_by * a + shift_by, scale_by * b + shift_by) for a, b in pairs
        )
        base = GradePairSeries(pairs=pairs, scale="interval")
        moved = GradePairSeries(pairs=mapped, scale="interval")
        try:
            alpha = krippendorff_alpha(base)
        except UndefinedAlphaError:
            with pytest.raises(UndefinedAlphaError):
                krippendorff_alpha(moved)
            continue
        assert krippendorff_alpha(moved) == pytest.approx(alpha, abs=1e-9)


def test_prompt_templates_match_golden_bytes():
    question = "Compute the derivative of f(x) = x^3 - 2x at x = 1."
    rule = "States that x = 2 solves the equation."
    answer = "x = 2 and x = 3"

    system, context = render_transcription_prompt(question)
    assert system == _golden("transcription_system.txt")
    assert context == _golden("question_context_example.txt")
    assert render_transcription_prompt()[1] is None

    system, user = render_rule_prompt(rule, answer)
    assert system == _golden("judgement_verbalized_ignore.txt")
    assert user == _golden("rule_user_example.txt")
    assert (
        render_rule_prompt(rule, answer, ignore_statement=False)[0]
        == _golden("judgement_verbalized_plain.txt")
    )
    assert (
        render_rule_prompt(rule, answer, format=FORMAT_MCQ)[0]
        == _golden("judgement_mcq_ignore.txt")
    )

    system, user = render_free_prompt(question, 2, "f'(1) = 1")
    assert system == _golden("free_system.txt")
    assert user == _golden("free_user_example.txt")

    assert render_paraphrase_prompt(rule) == _golden("paraphrase_example.txt")


def _run_demo_pipeline(tree: Path) -> tuple[bytes, bytes, bytes]:
    config = str(tree / "run.yaml")
    transcripts = str(tree / "transcripts.jsonl")
    assert main(["extract", "--config", config, "--pages", str(tree / "pages"), "--out", transcripts]) == 0
    assert main(["grade", "--config", config, "--transcripts", transcripts, "--run", "demo1"]) == 0
    assert main([
        "evaluate", "--config", config, "--run", "demo1",
        "--truth", str(tree / "truth.yaml"),
    ]) == 0
    run_dir = tree / "runs" / "demo1"
    return (
        (run_dir / "records.log").read_bytes(),
        (run_dir / "report.json").read_bytes(),
        Path(transcripts).read_bytes(),
    )


def test_demo_pipeline_is_byte_deterministic_offline(tmp_path, monkeypatch):
    start = time.perf_counter()
    monkeypatch.setenv(FIXED_TIME_ENV, "2026-01-01T00:00:00+00:00")

    def refuse_network(*_args, **_kwargs):
        raise AssertionError("the bundled fixture pipeline must not touch the network")

    monkeypatch.setattr(socket.socket, "connect", refuse_network)

    outputs = []
    for name in ("first", "second"):
        tree = tmp_path / name
        shutil.copytree(DEMO_DIR, tree)
        outputs.append(_run_demo_pipeline(tree))

    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]
    assert outputs[0][2] == outputs[1][2]
    report = json.loads(outputs[0][1].decode("utf-8"))
    assert report["overall"]["accuracy"] == pytest.approx(0.75)
    assert time.perf_counter() - start < 30.0


DISSECTION_PAGE = """\
Analysis midterm, sheet 2

Problem 1 (2 points): State the derivative of f(x) = sin(x).

Solution of Problem 1:
f'(x) = cos(x)

Problem 2 (1 point): Give the value of the integral of 2x from 0 to 1.

Solution of the Problem 2:
The integral equals 1, by the same substitution as Problem 1 (2 points): pattern.

Problem 3 (1 point): Name one antiderivative of cos(x).

Solution Problem 3:
sin(x) + C
"""


def test_page_dissection_matches_golden_segments():
    one_point = (Fraction(0), Fraction(1))
    exam = ExamSpec(
        exam_id="dissection-demo",
        problems=(
            ProblemSpec("1", "State the derivative of sin(x).", Fraction(2), (Fraction(0), Fraction(1), Fraction(2))),
            ProblemSpec("2", "Integrate 2x from 0 to 1.", Fraction(1), one_point),
            ProblemSpec("3", "Name one antiderivative of cos(x).", Fraction(1), one_point),
            ProblemSpec("4", "State the chain rule.", Fraction(1), one_point),
        ),
    )
    result = dissect_transcript(DISSECTION_PAGE, exam)
    golden = json.loads(_golden("dissected_page.json"))
    assert dict(result.answers) == golden["answers"]
    assert list(result.missing) == golden["missing"]
    assert "Problem 1 (2 points): pattern." in result.answers["2"]


ROOT_TWO_WORDINGS = (
    "States that x = 2 solves the equation.",
    "Mentions x = 2 as a solution.",
    "Identifies 2 as a root of the equation.",
    "Concludes that the equation holds for x = 2.",
    "Reports x = 2 among the solutions.",
)
ROOT_THREE_WORDINGS = (
    "States that x = 3 solves the equation.",
    "Mentions x = 3 as a solution.",
    "Identifies 3 as a root of the equation.",
    "Concludes that the equation holds for x = 3.",
    "Reports x = 3 among the solutions.",
)


def _rewording_grade_matrix() -> list[list[Fraction]]:
    """Grade six answers once per rule wording through the real engine."""
    answers = {
        "a1": ("x = 2 and x = 3 both work.", "Yes", "Yes"),
        "a2": ("Only x = 2 works.", "Yes", "No"),
        "a3": ("The equation has no solutions.", "No", "No"),
        "a4": ("Only x = 3 works.", "No", "Yes"),
        "a5": ("Both 2 and 3 are roots.", "Yes", "Yes"),
        "a6": ("x = 6 is the solution.", "No", "No"),
    }
    fixtures = FixtureSet()
    for first, second in zip(ROOT_TWO_WORDINGS, ROOT_THREE_WORDINGS):
        for text, verdict_one, verdict_two in answers.values():
            fixtures.script_judgement(first, text, [judgement_reply(verdict_one)])
            fixtures.script_judgement(second, text, [judgement_reply(verdict_two)])
    backend = fixtures.backend()
    problem = ProblemSpec(
        "1", "Solve x^2 - 5x + 6 = 0.", Fraction(2), (Fraction(0), Fraction(1), Fraction(2))
    )
    plan = SamplingPlan(n_ocr_variants=1, n_grading_runs=1, aggregation="majority")
    matrix: list[list[Fraction]] = []
    for first, second in zip(ROOT_TWO_WORDINGS, ROOT_THREE_WORDINGS):
        rubric = Rubric(
            problem_id="1",
            variant="itemized",
            combinator=ScoreCombinator("sum", Fraction(2)),
            rules=(
                GradingRule("root-two", first, Fraction(1)),
                GradingRule("root-three", second, Fraction(1)),
            ),
        )
        row = []
        for student, (text, _v1, _v2) in answers.items():
            transcript = Transcript(
                student_id=student,
                problem_id="1",
                text=text,
                source=TranscriptSource("mock", 0.7, 0),
            )
            outcome = grade_answer([transcript], problem, rubric, plan, backend)
            assert outcome.dropped == 0
            row.append(outcome.samples[0].points)
        matrix.append(row)
    return matrix


def test_rewording_agreement_is_perfect_then_tracks_the_oracle():
    matrix = _rewording_grade_matrix()
    assert len(matrix) == 5
    assert all(row == matrix[0] for row in matrix)
    assert robustness_alpha(matrix, scale="interval") == 1.0
    assert robustness_alpha(matrix, scale="nominal") == 1.0

    shuffled = [list(row) for row in matrix]
    shuffled[0] = shuffled[0][1:] + shuffled[0][:1]
    units = [
        [float(shuffled[v][i]) for v in range(len(shuffled))]
        for i in range(len(shuffled[0]))
    ]
    for scale in ("interval", "nominal"):
        assert robustness_alpha(shuffled, scale=scale) == pytest.approx(
            agreement_alpha_bruteforce(units, scale), abs=1e-9
        )


def test_confidence_never_returns_once_spread_widens():
    rng = random.Random(161803)
    deferred_draws = 0
    for _ in range(1000):
        grid = [Fraction(0)]
        for _step in range(rng.randint(1, 8)):
            grid.append(grid[-1] + Fraction(rng.randint(1, 3), 2))
        mean = Fraction(rng.randint(0, int(grid[-1] * 4) + 4), 4)
        sigma = Fraction(rng.randint(1, 60), 40)
        decision = sigma_decision(mean, sigma, grid)
        if decision.kind == "cannot_decide":
            deferred_draws += 1
            for bump in (Fraction(1, 8), Fraction(1, 2), Fraction(3, 2)):
                wider = sigma_decision(mean, sigma + bump, grid)
                assert wider.kind == "cannot_decide"
        else:
            assert decision.value == snap_to_assignable(mean, grid)
    assert deferred_draws >= 100


def test_review_loop_resolves_deferred_items_over_the_api(demo_tree, monkeypatch):
    monkeypatch.setenv(FIXED_TIME_ENV, "2026-01-01T00:00:00+00:00")
    config = load_run_config(demo_tree / "run.yaml")
    transcripts = demo_tree / "transcripts.jsonl"
    pipeline.extract_stage(config, demo_tree / "pages", transcripts)
    pipeline.grade_stage(config, transcripts, "demo1")

    record = RunStore(config.runs_dir).load_run("demo1")
    deferred = {
        (a.student_id, a.problem_id)
        for a in record.aggregates
        if a.decision.kind == "cannot_decide"
    }
    assert deferred

    app = create_app(config.runs_dir, truth_path=demo_tree / "truth.yaml")
    with TestClient(app) as client:
        queue = client.get("/api/runs/demo1/queue").json()["tasks"]
        assert {(t["student_id"], t["problem_id"]) for t in queue} == deferred

        task = queue[0]
        off_grid = client.post(
            f"/api/tasks/{task['task_id']}/resolve",
            json={"points": "0.25", "reviewer": "sam"},
        )
        assert off_grid.status_code == 422

        resolved = client.post(
            f"/api/tasks/{task['task_id']}/resolve",
            json={"points": "1", "reviewer": "sam"},
        )
        assert resolved.status_code == 200

        detail = client.get(f"/api/tasks/{task['task_id']}").json()
        assert detail["status"] == "resolved"
        assert detail["final_points"] == "1"

        again = client.post(
            f"/api/tasks/{task['task_id']}/resolve",
            json={"points": "2", "reviewer": "kim"},
        )
        assert again.status_code == 409
        assert again.json()["code"] == "already_resolved"
