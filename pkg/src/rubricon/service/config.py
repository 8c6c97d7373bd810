"""Run configuration: one YAML file describing backends, sampling and paths.

Relative paths inside the file are resolved against the file's own
directory, so a checked-in config works from any working directory.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from ..backend import BackendConfig
from ..engine import AGGREGATIONS, GRADING_MODES, SamplingPlan
from ..errors import ConfigError, ParseError, ValidationError
from ..extract import DEFAULT_MARKER_GRAMMAR, MarkerGrammar
from ..model import ExamSpec, points_str, to_points
from ..prompt import JUDGEMENT_FORMATS

logger = logging.getLogger(__name__)

WORKFLOW_WHOLE_PAGE = "whole-page"
WORKFLOW_BOX = "box"
WORKFLOWS = (WORKFLOW_WHOLE_PAGE, WORKFLOW_BOX)


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration plus the raw document for snapshots."""

    exam_path: Path
    workflow: str
    backends: tuple[BackendConfig, ...]
    ocr_backend: str
    grading_backend: str
    plan: SamplingPlan
    mode: str
    format: str
    ignore_statement: bool
    include_question_in_ocr: bool
    runs_dir: Path
    cache_dir: Path | None
    layout_path: Path | None
    review_unanswered: bool
    grammar: MarkerGrammar
    raw: Mapping[str, Any]

    def backend_config(self, name: str) -> BackendConfig:
        for config in self.backends:
            if config.name == name:
                return config
        raise ConfigError(f"no backend named {name!r} in the run config")


def _parse_backend(raw: Any, index: int, base: Path) -> BackendConfig:
    context = f"backends[{index}]"
    if not isinstance(raw, Mapping):
        raise ValidationError(f"{context}: expected a mapping")
    if "name" not in raw or "kind" not in raw:
        raise ValidationError(f"{context}: 'name' and 'kind' are required")
    fixtures = str(raw.get("fixtures", ""))
    if fixtures:
        fixtures = str((base / fixtures).resolve()) if not Path(fixtures).is_absolute() else fixtures
    return BackendConfig(
        name=str(raw["name"]),
        kind=str(raw["kind"]),
        endpoint=str(raw.get("endpoint", "")),
        model=str(raw.get("model", "")),
        api_key_env=str(raw.get("api_key_env", "RUBRICON_API_KEY")),
        max_parallel=int(raw.get("max_parallel", 4)),
        rpm=int(raw.get("rpm", 0)),
        retries=int(raw.get("retries", 3)),
        max_requests=int(raw.get("max_requests", 0)),
        fixtures=fixtures,
    )


def _parse_plan(raw: Any) -> SamplingPlan:
    if raw is None:
        return SamplingPlan()
    if not isinstance(raw, Mapping):
        raise ValidationError("plan: expected a mapping")
    defaults = SamplingPlan()
    return SamplingPlan(
        n_ocr_variants=int(raw.get("n_ocr_variants", defaults.n_ocr_variants)),
        n_grading_runs=int(raw.get("n_grading_runs", defaults.n_grading_runs)),
        grading_temperature=float(raw.get("grading_temperature", defaults.grading_temperature)),
        ocr_temperature=float(raw.get("ocr_temperature", defaults.ocr_temperature)),
        aggregation=str(raw.get("aggregation", defaults.aggregation)),
    )


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path).resolve()


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read run config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed run config {path}: {exc}") from exc
    if not isinstance(raw, Mapping):
        raise ParseError(f"run config {path}: top level must be a mapping")
    base = path.parent.resolve()

    if "exam" not in raw:
        raise ValidationError("run config: missing required field 'exam'")
    workflow = str(raw.get("workflow", WORKFLOW_WHOLE_PAGE))
    if workflow not in WORKFLOWS:
        raise ValidationError(f"workflow: must be one of {WORKFLOWS}, got {workflow!r}")

    raw_backends = raw.get("backends", [])
    if not isinstance(raw_backends, Sequence) or isinstance(raw_backends, (str, bytes)):
        raise ValidationError("backends: expected a list")
    if not raw_backends:
        raise ValidationError("backends: at least one backend is required")
    backends = tuple(_parse_backend(b, i, base) for i, b in enumerate(raw_backends))
    names = [b.name for b in backends]
    if len(set(names)) != len(names):
        raise ValidationError("backends: names must be unique")

    default_backend = backends[0].name
    ocr_backend = str(raw.get("ocr_backend", default_backend))
    grading_backend = str(raw.get("grading_backend", default_backend))
    for wanted in (ocr_backend, grading_backend):
        if wanted not in names:
            raise ValidationError(f"backend {wanted!r} is referenced but not defined")

    plan = _parse_plan(raw.get("plan"))
    mode = str(raw.get("mode", "rubric"))
    if mode not in GRADING_MODES:
        raise ValidationError(f"mode: must be one of {GRADING_MODES}, got {mode!r}")
    format_ = str(raw.get("format", "verbalized"))
    if format_ not in JUDGEMENT_FORMATS:
        raise ValidationError(f"format: must be one of {JUDGEMENT_FORMATS}, got {format_!r}")

    layout_value = raw.get("layout")
    layout_path = None if layout_value is None else _resolve(base, str(layout_value))
    if workflow == WORKFLOW_BOX and layout_path is None:
        raise ValidationError("layout: required for the box workflow")
    if workflow == WORKFLOW_BOX and plan.n_ocr_variants != 1:
        raise ValidationError("plan.n_ocr_variants: box workflow reads each region once")

    cache_value = raw.get("cache_dir")
    markers = raw.get("markers")
    if markers is None:
        grammar = DEFAULT_MARKER_GRAMMAR
    else:
        if not isinstance(markers, Mapping):
            raise ValidationError("markers: expected a mapping")
        grammar = MarkerGrammar(
            problem_pattern=str(
                markers.get("problem_pattern", DEFAULT_MARKER_GRAMMAR.problem_pattern)
            ),
            solution_pattern=str(
                markers.get("solution_pattern", DEFAULT_MARKER_GRAMMAR.solution_pattern)
            ),
        )

    return RunConfig(
        exam_path=_resolve(base, str(raw["exam"])),
        workflow=workflow,
        backends=backends,
        ocr_backend=ocr_backend,
        grading_backend=grading_backend,
        plan=plan,
        mode=mode,
        format=format_,
        ignore_statement=bool(raw.get("ignore_statement", True)),
        include_question_in_ocr=bool(raw.get("include_question_in_ocr", False)),
        runs_dir=_resolve(base, str(raw.get("runs_dir", "runs"))),
        cache_dir=None if cache_value is None else _resolve(base, str(cache_value)),
        layout_path=layout_path,
        review_unanswered=bool(raw.get("review_unanswered", False)),
        grammar=grammar,
        raw=raw,
    )


def load_ground_truth(
    path: str | Path, exam: ExamSpec
) -> tuple[dict[tuple[str, str], Fraction], list[str]]:
    """Read known-correct grades: a mapping student -> problem -> points.

    Values off the problem's assignable grid are skipped with a warning
    instead of poisoning every downstream metric.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read ground truth {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed ground truth {path}: {exc}") from exc
    if not isinstance(raw, Mapping) or not isinstance(raw.get("truth"), Mapping):
        raise ParseError(f"ground truth {path}: expected a mapping with a 'truth' mapping")

    truth: dict[tuple[str, str], Fraction] = {}
    warnings: list[str] = []
    for student_id, problems in raw["truth"].items():
        if not isinstance(problems, Mapping):
            warnings.append(f"truth[{student_id}]: expected a mapping, skipped")
            continue
        for problem_id, value in problems.items():
            sid, pid = str(student_id), str(problem_id)
            try:
                problem = exam.problem(pid)
            except KeyError:
                warnings.append(f"truth[{sid}][{pid}]: unknown problem, skipped")
                continue
            try:
                points = to_points(value, field_name=f"truth[{sid}][{pid}]")
            except ValidationError as exc:
                warnings.append(f"{exc}, skipped")
                continue
            if points not in problem.assignable_points:
                warnings.append(
                    f"truth[{sid}][{pid}]: {points_str(points)} is not an assignable "
                    f"value for problem {pid}, skipped"
                )
                continue
            truth[(sid, pid)] = points
    for warning in warnings:
        logger.warning("%s", warning)
    return truth, warnings
