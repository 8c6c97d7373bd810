"""Domain types for exams, rubrics, submissions and transcripts.

Points are exact rationals throughout.  Binary floating point is never used
for grid membership or tie decisions; values entering the domain are
converted once via to_points() and stay Fraction from then on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import yaml

from .errors import ParseError, ValidationError

RUBRIC_VARIANTS = ("original", "itemized")
COMBINATOR_MODES = ("sum", "max-of-groups")


def to_points(value: Any, *, field_name: str = "points") -> Fraction:
    """Convert a config or wire value to an exact rational.

    Accepts ints, strings ("1.5", "3/2") and floats.  Floats are read
    through their shortest decimal representation, so 0.1 means 1/10,
    not the nearest binary double.
    """
    if isinstance(value, bool):
        raise ValidationError(f"{field_name}: expected a number, got a boolean")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValidationError(f"{field_name}: value must be finite")
        return Fraction(str(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ValidationError(f"{field_name}: not a number: {value!r}") from exc
    raise ValidationError(f"{field_name}: expected a number, got {type(value).__name__}")


def points_str(value: Fraction) -> str:
    """Render a rational compactly: decimal when terminating, else "p/q"."""
    num, den = value.numerator, value.denominator
    if den == 1:
        return str(num)
    rest = den
    twos = fives = 0
    while rest % 2 == 0:
        rest //= 2
        twos += 1
    while rest % 5 == 0:
        rest //= 5
        fives += 1
    if rest != 1:
        return f"{num}/{den}"
    digits = max(twos, fives)
    scaled = abs(num) * 10**digits // den
    text = str(scaled).rjust(digits + 1, "0")
    sign = "-" if num < 0 else ""
    whole, frac = text[:-digits], text[-digits:]
    return f"{sign}{whole}.{frac}"


@dataclass(frozen=True)
class Tie:
    """Marks a value exactly midway between two adjacent grid members."""

    lower: Fraction
    upper: Fraction


def snap_to_assignable(value: Any, grid: Sequence[Fraction]) -> Fraction | Tie:
    """Return the grid member nearest to value, or a Tie when two are equidistant.

    The comparison is exact: value is converted to a rational first, so a
    midpoint always surfaces as a Tie instead of silently rounding.
    """
    if not grid:
        raise ValidationError("assignable_points: grid must not be empty")
    exact = to_points(value, field_name="value")
    best: Fraction | None = None
    best_dist: Fraction | None = None
    tied: Fraction | None = None
    for member in grid:
        dist = abs(member - exact)
        if best_dist is None or dist < best_dist:
            best, best_dist, tied = member, dist, None
        elif dist == best_dist:
            tied = member
    assert best is not None and best_dist is not None
    if tied is not None:
        low, high = sorted((best, tied))
        return Tie(low, high)
    return best


@dataclass(frozen=True)
class ProblemSpec:
    """One exam problem: statement, maximum and the assignable point grid."""

    problem_id: str
    question_text: str
    max_points: Fraction
    assignable_points: tuple[Fraction, ...]

    def __post_init__(self) -> None:
        if not self.problem_id:
            raise ValidationError("problem_id: must not be empty")
        if self.max_points <= 0:
            raise ValidationError(f"problem {self.problem_id}: max_points must be positive")
        grid = self.assignable_points
        if not grid:
            raise ValidationError(f"problem {self.problem_id}: assignable_points must not be empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValidationError(
                f"problem {self.problem_id}: assignable_points must be strictly ascending"
            )
        if grid[0] != 0:
            raise ValidationError(f"problem {self.problem_id}: assignable_points must contain 0")
        if grid[-1] != self.max_points:
            raise ValidationError(
                f"problem {self.problem_id}: assignable_points must end at max_points"
            )


@dataclass(frozen=True)
class GradingRule:
    """One rubric criterion worth a fixed number of points when satisfied."""

    rule_id: str
    text: str
    points: Fraction
    group: str | None = None
    paraphrases: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.rule_id:
            raise ValidationError("rule_id: must not be empty")
        if not self.text.strip():
            raise ValidationError(f"rule {self.rule_id}: text must not be empty")
        if self.points < 0:
            raise ValidationError(f"rule {self.rule_id}: points must be non-negative")


@dataclass(frozen=True)
class ScoreCombinator:
    """How satisfied rules combine into a problem score, capped at max_points."""

    mode: str
    cap: Fraction

    def __post_init__(self) -> None:
        if self.mode not in COMBINATOR_MODES:
            raise ValidationError(
                f"combinator: mode must be one of {COMBINATOR_MODES}, got {self.mode!r}"
            )
        if self.cap < 0:
            raise ValidationError("combinator: cap must be non-negative")


@dataclass(frozen=True)
class Rubric:
    """The grading rules for one problem plus their combination policy."""

    problem_id: str
    variant: str
    combinator: ScoreCombinator
    rules: tuple[GradingRule, ...]

    def __post_init__(self) -> None:
        if self.variant not in RUBRIC_VARIANTS:
            raise ValidationError(
                f"rubric {self.problem_id}: variant must be one of {RUBRIC_VARIANTS}, "
                f"got {self.variant!r}"
            )
        if not self.rules:
            raise ValidationError(f"rubric {self.problem_id}: needs at least one rule")
        seen: set[str] = set()
        for rule in self.rules:
            if rule.rule_id in seen:
                raise ValidationError(
                    f"rubric {self.problem_id}: duplicate rule id {rule.rule_id}"
                )
            seen.add(rule.rule_id)


@dataclass(frozen=True)
class ExamSpec:
    """A whole exam: ordered problems with unique ids."""

    exam_id: str
    problems: tuple[ProblemSpec, ...]
    language: str = "en"

    def __post_init__(self) -> None:
        if not self.exam_id:
            raise ValidationError("exam_id: must not be empty")
        if not self.problems:
            raise ValidationError("problems: must not be empty")
        seen: set[str] = set()
        for problem in self.problems:
            if problem.problem_id in seen:
                raise ValidationError(f"problems: duplicate id {problem.problem_id}")
            seen.add(problem.problem_id)

    def problem(self, problem_id: str) -> ProblemSpec:
        for candidate in self.problems:
            if candidate.problem_id == problem_id:
                return candidate
        raise KeyError(problem_id)

    def problem_ids(self) -> tuple[str, ...]:
        return tuple(p.problem_id for p in self.problems)


@dataclass(frozen=True)
class PageImage:
    """One scanned page of a submission, kept as opaque encoded bytes."""

    index: int
    data: bytes
    media_type: str = "image/png"


@dataclass(frozen=True)
class Submission:
    """One student's scanned pages, optionally with known true grades."""

    student_id: str
    pages: tuple[PageImage, ...]

    def __post_init__(self) -> None:
        if not self.student_id:
            raise ValidationError("student_id: must not be empty")


@dataclass(frozen=True)
class TranscriptSource:
    """Where a transcript came from: backend, temperature and variant slot."""

    backend_name: str
    temperature: float
    variant_index: int
    with_question_context: bool = False


@dataclass(frozen=True)
class Transcript:
    """Machine-read text of one student's answer to one problem."""

    student_id: str
    problem_id: str
    text: str
    source: TranscriptSource
    empty: bool = False


def _require(mapping: Mapping[str, Any], key: str, context: str) -> Any:
    if key not in mapping:
        raise ValidationError(f"{context}: missing required field {key!r}")
    return mapping[key]


def _parse_problem(raw: Any, index: int) -> ProblemSpec:
    context = f"problems[{index}]"
    if not isinstance(raw, Mapping):
        raise ValidationError(f"{context}: expected a mapping")
    problem_id = str(_require(raw, "id", context))
    max_points = to_points(_require(raw, "max_points", context), field_name=f"{context}.max_points")
    raw_grid = _require(raw, "assignable", context)
    if not isinstance(raw_grid, Sequence) or isinstance(raw_grid, (str, bytes)):
        raise ValidationError(f"{context}.assignable: expected a list")
    grid = tuple(
        to_points(v, field_name=f"{context}.assignable[{i}]") for i, v in enumerate(raw_grid)
    )
    return ProblemSpec(
        problem_id=problem_id,
        question_text=str(raw.get("question", "")),
        max_points=max_points,
        assignable_points=grid,
    )


def _parse_rule(raw: Any, context: str) -> GradingRule:
    if not isinstance(raw, Mapping):
        raise ValidationError(f"{context}: expected a mapping")
    paraphrases = raw.get("paraphrases", [])
    if not isinstance(paraphrases, Sequence) or isinstance(paraphrases, (str, bytes)):
        raise ValidationError(f"{context}.paraphrases: expected a list")
    group = raw.get("group")
    return GradingRule(
        rule_id=str(_require(raw, "id", context)),
        text=str(_require(raw, "text", context)),
        points=to_points(_require(raw, "points", context), field_name=f"{context}.points"),
        group=None if group is None else str(group),
        paraphrases=tuple(str(p) for p in paraphrases),
    )


def _parse_rubric(raw: Any, index: int, exam: ExamSpec) -> Rubric:
    context = f"rubrics[{index}]"
    if not isinstance(raw, Mapping):
        raise ValidationError(f"{context}: expected a mapping")
    problem_id = str(_require(raw, "problem_id", context))
    try:
        problem = exam.problem(problem_id)
    except KeyError:
        raise ValidationError(f"{context}.problem_id: unknown problem {problem_id!r}") from None
    raw_rules = _require(raw, "rules", context)
    if not isinstance(raw_rules, Sequence) or isinstance(raw_rules, (str, bytes)):
        raise ValidationError(f"{context}.rules: expected a list")
    rules = tuple(_parse_rule(r, f"{context}.rules[{i}]") for i, r in enumerate(raw_rules))
    mode = str(raw.get("combinator", "sum"))
    return Rubric(
        problem_id=problem_id,
        variant=str(raw.get("variant", "original")),
        combinator=ScoreCombinator(mode=mode, cap=problem.max_points),
        rules=rules,
    )


def load_exam_config(path: str | Path) -> tuple[ExamSpec, dict[str, Rubric]]:
    """Load an exam definition with its rubrics from one YAML document.

    Returns the exam plus a mapping problem_id -> Rubric.  Problems without
    a rubric are allowed (they can still be graded in free mode).
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read exam config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed exam config {path}: {exc}") from exc
    if not isinstance(raw, Mapping):
        raise ParseError(f"exam config {path}: top level must be a mapping")

    raw_problems = _require(raw, "problems", "exam")
    if not isinstance(raw_problems, Sequence) or isinstance(raw_problems, (str, bytes)):
        raise ValidationError("problems: expected a list")
    exam = ExamSpec(
        exam_id=str(_require(raw, "exam_id", "exam")),
        problems=tuple(_parse_problem(p, i) for i, p in enumerate(raw_problems)),
        language=str(raw.get("language", "en")),
    )

    rubrics: dict[str, Rubric] = {}
    raw_rubrics = raw.get("rubrics", [])
    if not isinstance(raw_rubrics, Sequence) or isinstance(raw_rubrics, (str, bytes)):
        raise ValidationError("rubrics: expected a list")
    for i, raw_rubric in enumerate(raw_rubrics):
        rubric = _parse_rubric(raw_rubric, i, exam)
        if rubric.problem_id in rubrics:
            raise ValidationError(f"rubrics[{i}]: duplicate rubric for problem {rubric.problem_id}")
        rubrics[rubric.problem_id] = rubric
    return exam, rubrics


def exam_to_dict(exam: ExamSpec, rubrics: Mapping[str, Rubric]) -> dict[str, Any]:
    """Serialize an exam and rubrics to plain data for snapshots."""
    return {
        "exam_id": exam.exam_id,
        "language": exam.language,
        "problems": [
            {
                "id": p.problem_id,
                "question": p.question_text,
                "max_points": points_str(p.max_points),
                "assignable": [points_str(v) for v in p.assignable_points],
            }
            for p in exam.problems
        ],
        "rubrics": [
            {
                "problem_id": r.problem_id,
                "variant": r.variant,
                "combinator": r.combinator.mode,
                "rules": [
                    {
                        "id": rule.rule_id,
                        "text": rule.text,
                        "points": points_str(rule.points),
                        "group": rule.group,
                        "paraphrases": list(rule.paraphrases),
                    }
                    for rule in r.rules
                ],
            }
            for r in sorted(rubrics.values(), key=lambda r: r.problem_id)
        ],
    }


def exam_from_dict(raw: Mapping[str, Any]) -> tuple[ExamSpec, dict[str, Rubric]]:
    """Inverse of exam_to_dict; round-trips exactly."""
    raw_problems = _require(raw, "problems", "exam")
    exam = ExamSpec(
        exam_id=str(_require(raw, "exam_id", "exam")),
        problems=tuple(_parse_problem(p, i) for i, p in enumerate(raw_problems)),
        language=str(raw.get("language", "en")),
    )
    rubrics: dict[str, Rubric] = {}
    for i, raw_rubric in enumerate(raw.get("rubrics", [])):
        rubric = _parse_rubric(raw_rubric, i, exam)
        rubrics[rubric.problem_id] = rubric
    return exam, rubrics
