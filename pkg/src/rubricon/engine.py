"""Sampled grading: repeated judgements per answer, aggregation, and the
confidence rule that routes uncertain items to human review.

A grading cell is one (transcript variant, run) pair.  Cells are
independent, so they can be dispatched concurrently; results are always
re-ordered by their indices before anything downstream sees them.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

from . import prompt
from .backend import Backend, ModelRequest, TextPart
from .errors import (
    BackendError,
    ConfigError,
    DegenerateSampleSetError,
    ParseError,
    ValidationError,
)
from .model import (
    GradingRule,
    ProblemSpec,
    Rubric,
    Tie,
    Transcript,
    points_str,
    snap_to_assignable,
    to_points,
)
from .prompt import JudgementOutcome, VERDICT_YES

logger = logging.getLogger(__name__)

MODE_RUBRIC = "rubric"
MODE_FREE = "free"
GRADING_MODES = (MODE_RUBRIC, MODE_FREE)

AGGREGATION_MEAN = "mean"
AGGREGATION_MAJORITY = "majority"
AGGREGATIONS = (AGGREGATION_MEAN, AGGREGATION_MAJORITY)

# Above this fraction of dropped cells an aggregate is not trusted.
MAX_DROP_RATE = Fraction(1, 5)

TRANSCRIPTION_MAX_OUTPUT = 4096


@dataclass(frozen=True)
class SamplingPlan:
    """How many transcript variants and grading runs to draw, and how hot."""

    n_ocr_variants: int = 1
    n_grading_runs: int = 5
    grading_temperature: float = 0.7
    ocr_temperature: float = 0.7
    aggregation: str = AGGREGATION_MEAN

    def __post_init__(self) -> None:
        if self.n_ocr_variants < 1:
            raise ValidationError("n_ocr_variants: must be at least 1")
        if self.n_grading_runs < 1:
            raise ValidationError("n_grading_runs: must be at least 1")
        for name in ("grading_temperature", "ocr_temperature"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(f"{name}: must be finite and non-negative")
        if self.aggregation not in AGGREGATIONS:
            raise ValidationError(f"aggregation: must be one of {AGGREGATIONS}")

    @property
    def samples_per_item(self) -> int:
        return self.n_ocr_variants * self.n_grading_runs

    def sample_index(self, variant: int, run: int) -> int:
        """Flat sample slot for a cell; distinct per (variant, run)."""
        return variant * self.n_grading_runs + run


@dataclass(frozen=True)
class SampleGrade:
    """The points one grading cell awarded, with its raw judgements."""

    student_id: str
    problem_id: str
    ocr_variant: int
    run: int
    points: Fraction
    mode: str
    rule_judgements: tuple[tuple[str, JudgementOutcome], ...] = ()
    explanation: str = ""


DECISION_CAN_DECIDE = "can_decide"
DECISION_CANNOT_DECIDE = "cannot_decide"
DECISION_UNANSWERED = "unanswered"


@dataclass(frozen=True)
class Decision:
    """Whether the pipeline commits to a grade for an item."""

    kind: str
    value: Fraction | None = None

    def __post_init__(self) -> None:
        if self.kind not in (DECISION_CAN_DECIDE, DECISION_CANNOT_DECIDE, DECISION_UNANSWERED):
            raise ValidationError(f"decision kind: unknown value {self.kind!r}")
        if self.kind == DECISION_CAN_DECIDE and self.value is None:
            raise ValidationError("decision: can_decide requires a value")
        if self.kind != DECISION_CAN_DECIDE and self.value is not None:
            raise ValidationError(f"decision: {self.kind} must not carry a value")


def can_decide(value: Fraction) -> Decision:
    return Decision(DECISION_CAN_DECIDE, value)


CANNOT_DECIDE = Decision(DECISION_CANNOT_DECIDE)
UNANSWERED = Decision(DECISION_UNANSWERED)


@dataclass(frozen=True)
class AggregateGrade:
    """Summary of all samples for one (student, problem) item."""

    student_id: str
    problem_id: str
    method: str
    n_samples: int
    dropped: int
    decision: Decision
    mean: Fraction | None = None
    sigma: float | None = None
    snapped: Fraction | None = None
    tie_vote: bool = False

    @property
    def drop_rate(self) -> Fraction:
        attempted = self.n_samples + self.dropped
        if attempted == 0:
            return Fraction(0)
        return Fraction(self.dropped, attempted)


@dataclass(frozen=True)
class GradeOutcome:
    """grade_answer result: kept samples plus how many cells were dropped."""

    samples: tuple[SampleGrade, ...]
    dropped: int
    warnings: tuple[str, ...] = ()


def score_rules(
    judgements: Mapping[str, JudgementOutcome] | Mapping[str, str],
    rubric: Rubric,
) -> Fraction:
    """Combine per-rule verdicts into a problem score.

    Only a yes awards a rule's points; unsure counts as no.  A rule with
    no recorded judgement also counts as no, and is logged so silent
    zeros cannot hide.  Sum mode adds all awarded points; max-of-groups
    sums within each group and keeps the best group.  Either way the
    result is capped.
    """
    awarded: dict[str, Fraction] = {}
    for rule in rubric.rules:
        outcome = judgements.get(rule.rule_id)
        if outcome is None:
            logger.warning(
                "rubric %s: no judgement recorded for rule %s, counting as no",
                rubric.problem_id, rule.rule_id,
            )
            verdict = prompt.VERDICT_NO
        elif isinstance(outcome, JudgementOutcome):
            verdict = outcome.verdict
        else:
            verdict = outcome
        group = rule.group if rule.group is not None else rule.rule_id
        if verdict == VERDICT_YES:
            awarded[group] = awarded.get(group, Fraction(0)) + rule.points
        else:
            awarded.setdefault(group, Fraction(0))
    if rubric.combinator.mode == "sum":
        total = sum(awarded.values(), Fraction(0))
    else:
        total = max(awarded.values(), default=Fraction(0))
    return min(total, rubric.combinator.cap)


def _to_exact(value: Any, *, field_name: str) -> Fraction:
    """Exact rational view of a measurement for boundary comparisons.

    Floats are read through their shortest decimal form, which preserves
    ordering and makes decimal inputs like 0.21 behave as written.
    """
    return to_points(value, field_name=field_name)


def sigma_decision(
    mean: Any, sigma: Any, grid: Sequence[Fraction]
) -> Decision:
    """Commit to the nearest grid value only when at most one grid value
    lies within one standard deviation of the mean.

    The interval is closed, so a grid value exactly sigma away counts as
    ambiguous evidence.  Spread across two or more plausible grades, or a
    mean exactly between two grid values, yields cannot-decide.
    """
    exact_mean = _to_exact(mean, field_name="mean")
    exact_sigma = _to_exact(sigma, field_name="sigma")
    if exact_sigma < 0:
        raise ValidationError("sigma: must be non-negative")
    within = sum(1 for member in grid if abs(member - exact_mean) <= exact_sigma)
    if within >= 2:
        return CANNOT_DECIDE
    snapped = snap_to_assignable(exact_mean, grid)
    if isinstance(snapped, Tie):
        return CANNOT_DECIDE
    return can_decide(snapped)


def aggregate_mean(samples: Sequence[Fraction]) -> tuple[Fraction, float]:
    """Arithmetic mean and sample standard deviation of point values.

    The mean stays an exact rational; the deviation uses the n-1 divisor
    and is a float because of the square root.
    """
    if len(samples) < 2:
        raise DegenerateSampleSetError(
            f"need at least 2 samples for a spread, got {len(samples)}",
            valid=len(samples),
        )
    mean = sum(samples, Fraction(0)) / len(samples)
    variance = sum((s - mean) ** 2 for s in samples) / (len(samples) - 1)
    return mean, math.sqrt(variance)


def aggregate_majority(samples: Sequence[Fraction]) -> tuple[Fraction, bool]:
    """Most frequent point value; ties break toward the lowest tied value.

    Returns the winner and whether a tie had to be broken.
    """
    if not samples:
        raise DegenerateSampleSetError("cannot take a majority of zero samples")
    counts: dict[Fraction, int] = {}
    for sample in samples:
        counts[sample] = counts.get(sample, 0) + 1
    best_count = max(counts.values())
    tied = sorted(value for value, count in counts.items() if count == best_count)
    return tied[0], len(tied) > 1


def aggregate_samples(
    student_id: str,
    problem_id: str,
    samples: Sequence[SampleGrade],
    dropped: int,
    plan: SamplingPlan,
    problem: ProblemSpec,
) -> AggregateGrade:
    """Fold one item's samples into a grade plus a decision.

    No samples at all means the answer was blank: unanswered.  When more
    than a fifth of attempted cells were dropped for unparseable replies
    the aggregate is never trusted, whatever the spread says.
    """
    if not samples and dropped == 0:
        return AggregateGrade(
            student_id=student_id,
            problem_id=problem_id,
            method=plan.aggregation,
            n_samples=0,
            dropped=0,
            decision=UNANSWERED,
        )
    points = [s.points for s in samples]
    attempted = len(points) + dropped
    drop_exceeded = attempted > 0 and Fraction(dropped, attempted) > MAX_DROP_RATE

    if plan.aggregation == AGGREGATION_MAJORITY:
        value, tie = aggregate_majority(points)
        snapped = snap_to_assignable(value, problem.assignable_points)
        snapped_value = None if isinstance(snapped, Tie) else snapped
        decision = CANNOT_DECIDE if (drop_exceeded or snapped_value is None) else can_decide(
            snapped_value
        )
        return AggregateGrade(
            student_id=student_id,
            problem_id=problem_id,
            method=plan.aggregation,
            n_samples=len(points),
            dropped=dropped,
            decision=decision,
            snapped=snapped_value,
            tie_vote=tie,
        )

    mean, sigma = aggregate_mean(points)
    snapped = snap_to_assignable(mean, problem.assignable_points)
    snapped_value = None if isinstance(snapped, Tie) else snapped
    decision = sigma_decision(mean, sigma, problem.assignable_points)
    if drop_exceeded:
        decision = CANNOT_DECIDE
    return AggregateGrade(
        student_id=student_id,
        problem_id=problem_id,
        method=plan.aggregation,
        n_samples=len(points),
        dropped=dropped,
        decision=decision,
        mean=mean,
        sigma=sigma,
        snapped=snapped_value,
    )


def _judge_rule(
    backend: Backend,
    backend_name: str,
    rule_text: str,
    answer_text: str,
    format: str,
    ignore_statement: bool,
    temperature: float,
    sample_index: int,
    retry_offset: int,
) -> JudgementOutcome:
    """One rule judgement with a single retry on an unparseable reply.

    The retry uses a shifted sample slot so deterministic backends do
    not replay the exact bad reply.
    """
    system, user = prompt.render_rule_prompt(rule_text, answer_text, format, ignore_statement)
    request = ModelRequest(
        backend_name=backend_name,
        system_prompt=system,
        user_parts=(TextPart(user),),
        temperature=temperature,
        request_tag="judgement",
    )
    try:
        return prompt.parse_judgement(backend.complete(request, sample_index).text, format)
    except ParseError as first:
        logger.warning("unparseable judgement (sample %d): %s; retrying", sample_index, first)
        reply = backend.complete(request, sample_index + retry_offset)
        return prompt.parse_judgement(reply.text, format)


def _award_free_points(
    backend: Backend,
    backend_name: str,
    problem: ProblemSpec,
    answer_text: str,
    temperature: float,
    sample_index: int,
    retry_offset: int,
) -> tuple[Fraction, str]:
    if problem.max_points.denominator != 1:
        raise ConfigError(
            f"problem {problem.problem_id}: free grading needs an integer maximum, "
            f"got {points_str(problem.max_points)}"
        )
    system, user = prompt.render_free_prompt(
        problem.question_text, int(problem.max_points), answer_text
    )
    request = ModelRequest(
        backend_name=backend_name,
        system_prompt=system,
        user_parts=(TextPart(user),),
        temperature=temperature,
        request_tag="free-points",
    )

    def attempt(index: int) -> tuple[Fraction, str]:
        outcome = prompt.parse_points(backend.complete(request, index).text)
        points = Fraction(outcome.points)
        if points > problem.max_points:
            raise ParseError(
                f"awarded points {outcome.points} exceed the maximum "
                f"{points_str(problem.max_points)}"
            )
        return points, outcome.explanation

    try:
        return attempt(sample_index)
    except ParseError as first:
        logger.warning("unparseable point award (sample %d): %s; retrying", sample_index, first)
        return attempt(sample_index + retry_offset)


def _grade_cell(
    transcript: Transcript,
    problem: ProblemSpec,
    rubric: Rubric | None,
    plan: SamplingPlan,
    backend: Backend,
    mode: str,
    format: str,
    ignore_statement: bool,
    run: int,
) -> SampleGrade:
    variant = transcript.source.variant_index
    sample_index = plan.sample_index(variant, run)
    retry_offset = plan.samples_per_item
    if mode == MODE_RUBRIC:
        assert rubric is not None
        judgements: list[tuple[str, JudgementOutcome]] = []
        for rule in rubric.rules:
            outcome = _judge_rule(
                backend,
                backend.name,
                rule.text,
                transcript.text,
                format,
                ignore_statement,
                plan.grading_temperature,
                sample_index,
                retry_offset,
            )
            judgements.append((rule.rule_id, outcome))
        points = score_rules(dict(judgements), rubric)
        return SampleGrade(
            student_id=transcript.student_id,
            problem_id=transcript.problem_id,
            ocr_variant=variant,
            run=run,
            points=points,
            mode=mode,
            rule_judgements=tuple(judgements),
        )
    points, explanation = _award_free_points(
        backend,
        backend.name,
        problem,
        transcript.text,
        plan.grading_temperature,
        sample_index,
        retry_offset,
    )
    return SampleGrade(
        student_id=transcript.student_id,
        problem_id=transcript.problem_id,
        ocr_variant=variant,
        run=run,
        points=points,
        mode=mode,
        explanation=explanation,
    )


def grade_answer(
    transcripts: Sequence[Transcript],
    problem: ProblemSpec,
    rubric: Rubric | None,
    plan: SamplingPlan,
    backend: Backend,
    mode: str = MODE_RUBRIC,
    format: str = prompt.FORMAT_VERBALIZED,
    ignore_statement: bool = True,
    max_workers: int = 8,
) -> GradeOutcome:
    """Grade one answer across every (transcript variant, run) cell.

    Empty transcript variants contribute no cells; when every variant is
    empty the outcome has zero samples and the caller records an
    unanswered item.  A cell whose reply stays unparseable after one
    retry is dropped, never scored as zero.  With mean aggregation,
    finishing with fewer than two valid samples is an error because no
    spread can be computed.
    """
    if mode not in GRADING_MODES:
        raise ConfigError(f"unknown grading mode: {mode!r}")
    if mode == MODE_RUBRIC and rubric is None:
        raise ConfigError(f"problem {problem.problem_id}: rubric mode needs a rubric")

    live = [t for t in transcripts if not t.empty]
    if not live:
        return GradeOutcome(samples=(), dropped=0)

    cells = [(transcript, run) for transcript in live for run in range(plan.n_grading_runs)]
    samples: list[SampleGrade] = []
    warnings: list[str] = []
    dropped = 0

    def run_cell(cell: tuple[Transcript, int]) -> SampleGrade | str:
        transcript, run = cell
        try:
            return _grade_cell(
                transcript, problem, rubric, plan, backend, mode, format, ignore_statement, run
            )
        except ParseError as exc:
            return (
                f"{transcript.student_id}/{transcript.problem_id} "
                f"variant {transcript.source.variant_index} run {run}: {exc}"
            )
        except BackendError as exc:
            raise type(exc)(
                f"{transcript.student_id}/{transcript.problem_id} "
                f"variant {transcript.source.variant_index} run {run}: {exc}"
            ) from exc

    with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(cells)))) as pool:
        for result in pool.map(run_cell, cells):
            if isinstance(result, str):
                dropped += 1
                warnings.append(result)
                logger.warning("dropping cell after retry: %s", result)
            else:
                samples.append(result)

    samples.sort(key=lambda s: (s.ocr_variant, s.run))
    if plan.aggregation == AGGREGATION_MEAN and len(samples) < 2:
        raise DegenerateSampleSetError(
            f"{problem.problem_id}: only {len(samples)} valid samples remain "
            f"after {dropped} drops",
            valid=len(samples),
            dropped=dropped,
        )
    return GradeOutcome(samples=tuple(samples), dropped=dropped, warnings=tuple(warnings))


def generate_rule_variants(
    rule: GradingRule,
    k: int,
    backend: Backend,
    temperature: float = 0.7,
) -> list[GradingRule]:
    """Ask the backend for k rewordings of a rule.

    Each variant keeps the rule's points and group so scoring is
    unaffected; duplicates are allowed.  A blank reply is retried once.
    """
    if k < 1:
        raise ConfigError("k: must request at least one variant")
    variants: list[GradingRule] = []
    combined = prompt.render_paraphrase_prompt(rule.text)
    request = ModelRequest(
        backend_name=backend.name,
        system_prompt="",
        user_parts=(TextPart(combined),),
        temperature=temperature,
        request_tag="paraphrase",
    )
    for index in range(k):
        text = backend.complete(request, index).text.strip()
        if not text:
            logger.warning("blank paraphrase for rule %s (sample %d); retrying", rule.rule_id, index)
            text = backend.complete(request, index + k).text.strip()
        if not text:
            raise ParseError(f"rule {rule.rule_id}: paraphrase sample {index} came back blank")
        variants.append(
            replace(rule, rule_id=f"{rule.rule_id}~v{index + 1}", text=text, paraphrases=())
        )
    return variants
