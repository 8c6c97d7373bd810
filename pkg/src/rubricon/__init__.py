"""Sampled rubric grading of handwritten-exam transcripts.

The package turns scanned answer pages into per-problem transcripts,
grades each answer many times against rubric rules, aggregates the
samples into a grade with a confidence decision, and routes everything
the pipeline will not commit to into a human review queue.
"""
from .engine import (
    AggregateGrade,
    Decision,
    SampleGrade,
    SamplingPlan,
    aggregate_majority,
    aggregate_mean,
    grade_answer,
    score_rules,
    sigma_decision,
)
from .errors import RubriconError
from .metrics import (
    ContingencyTable,
    GradePairSeries,
    accuracy,
    build_contingency,
    contingency_metrics,
    krippendorff_alpha,
    robustness_alpha,
)
from .model import (
    ExamSpec,
    GradingRule,
    ProblemSpec,
    Rubric,
    Tie,
    Transcript,
    load_exam_config,
    snap_to_assignable,
)

__all__ = [
    "AggregateGrade",
    "ContingencyTable",
    "Decision",
    "ExamSpec",
    "GradePairSeries",
    "GradingRule",
    "ProblemSpec",
    "Rubric",
    "RubriconError",
    "SampleGrade",
    "SamplingPlan",
    "Tie",
    "Transcript",
    "accuracy",
    "aggregate_majority",
    "aggregate_mean",
    "build_contingency",
    "contingency_metrics",
    "grade_answer",
    "krippendorff_alpha",
    "load_exam_config",
    "robustness_alpha",
    "score_rules",
    "sigma_decision",
    "snap_to_assignable",
]

__version__ = "0.1.0"
