/**
 * Shapes of the studio HTTP API payloads the UI consumes and produces.
 */

export type TaskKind = "select_round" | "render_dedup" | "critique";
export type TaskStatus = "open" | "submitted" | "qa_flagged";

export interface TaskSummary {
  task_id: string;
  kind: TaskKind;
  status: TaskStatus;
  annotator: string;
  created_ts: number;
  about: Record<string, unknown>;
}

export interface TaskEnvelope {
  task_id: string;
  kind: TaskKind;
  payload: Record<string, unknown>;
  status: TaskStatus;
  annotator: string;
  created_ts: number;
  submitted_ts: number | null;
  submission: Record<string, unknown> | null;
}

export interface SelectionRecord {
  record_id: string;
  render_url: string | null;
}

export interface SelectionBundle {
  task: TaskEnvelope;
  records: SelectionRecord[];
}

export interface DedupSide {
  record_id: string;
  render_url: string | null;
  code: string;
}

export interface DedupBundle {
  task: TaskEnvelope;
  candidate: DedupSide;
  head: DedupSide;
}

export interface GenerationTurn {
  turn_index: number;
  producer_model: string;
  code: string;
  render_url: string | null;
  runtime_errors: string[];
  feedback_used: string | null;
}

export interface CritiqueBundle {
  task: TaskEnvelope;
  record_id: string;
  instruction: string;
  persona: Record<string, unknown>;
  reference_render_url: string | null;
  candidate_render_url: string | null;
  suggestions: string[];
  defect_categories: string[];
  turns: GenerationTurn[];
}

export interface SelectionPayload {
  selected_ids: string[];
}

export interface CritiqueFinding {
  category: string;
  text: string;
}

export interface CritiquePayload {
  findings: CritiqueFinding[];
  suggestion?: string;
  target_turn?: number;
}

export interface PreviewPayload {
  feedback: string;
}

export interface PreviewResult {
  record_id: string;
  feedback_hash: string;
  image_url: string | null;
  code: string;
  errors: string[];
  cached: boolean;
}

export interface HealthInfo {
  status: string;
  records: number;
  tasks: number;
}

/** The verdict category that excludes defect findings and demands a suggestion. */
export const NO_DEFECT = "NoDefect";
