// Shapes of the review service's JSON API. The console displays these
// fields verbatim; it never computes grades or confidence itself.

export interface DecisionView {
  kind: "can_decide" | "cannot_decide" | "unanswered";
  value: string | null;
}

export interface AggregateView {
  method: string;
  n_samples: number;
  dropped: number;
  mean: number | null;
  mean_exact: string | null;
  sigma: number | null;
  snapped: string | null;
  decision: DecisionView;
  tie_vote: boolean;
}

export interface ResolutionView {
  final_points: string;
  reviewer: string;
  note: string;
  resolved_at: string;
}

export interface TaskView {
  task_id: string;
  run_id: string;
  student_id: string;
  problem_id: string;
  reason: string;
  created_at: string;
  status: "open" | "resolved";
  max_points: string;
  assignable: string[];
  aggregate: Partial<AggregateView>;
  final_points: string | null;
  resolution?: ResolutionView;
}

export interface TranscriptView {
  variant_index: number;
  text: string;
  empty: boolean;
  backend_name: string;
}

export interface RuleView {
  rule_id: string;
  text: string;
  points: string;
  group: string | null;
}

export interface JudgementView {
  rule_id: string;
  rule_text: string;
  verdict: string;
  explanation: string;
}

export interface SampleView {
  ocr_variant: number;
  run: number;
  points: string;
  mode: string;
  explanation: string;
  judgements: JudgementView[];
}

export interface TaskDetail extends TaskView {
  question_text: string;
  transcripts: TranscriptView[];
  rules: RuleView[];
  samples: SampleView[];
}

export interface RunView {
  run_id: string;
  created_at: string | null;
  n_items: number;
  n_deferred: number;
  n_tasks: number;
  n_open_tasks: number;
}

export interface QueueView {
  run_id: string;
  tasks: TaskView[];
}

export interface ConfidenceView {
  true_positive: number;
  false_positive: number;
  false_negative: number;
  true_negative: number;
  accuracy: number;
  precision: number | null;
  recall: number | null;
  f1: number | null;
  fp_rate: number;
  positive_rate: number;
}

export interface ProblemReport {
  problem_id: string;
  n_graded: number;
  n_unanswered: number;
  accuracy: number | null;
  alpha: number | null;
  alpha_scale: string;
  confidence: ConfidenceView | null;
}

export interface RunReport {
  run_id: string;
  alpha_scale: string;
  score_unanswered_zero: boolean;
  problems: ProblemReport[];
  overall: ProblemReport;
  truth_warnings: string[];
}

export interface ApiErrorBody {
  status: number;
  code: string;
  message: string;
}
