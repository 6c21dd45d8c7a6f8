/**
 * Client-side validation of submit payloads against the API schema.
 *
 * Every payload passes through here before a network send; the rules mirror
 * the server's so a rejected submit never leaves the browser.
 */

import { CritiquePayload, NO_DEFECT, PreviewPayload, SelectionPayload } from "./types.js";

export interface ValidationIssue {
  field: string;
  message: string;
}

export function validateSelection(payload: SelectionPayload): ValidationIssue[] {
  const issues: ValidationIssue[] = [];
  if (!Array.isArray(payload.selected_ids)) {
    issues.push({ field: "selected_ids", message: "selected_ids must be a list" });
    return issues;
  }
  // an empty list is valid: a round may contain no keepers
  for (const id of payload.selected_ids) {
    if (typeof id !== "string" || id.length === 0) {
      issues.push({ field: "selected_ids", message: "every selected id must be a non-empty string" });
      break;
    }
  }
  return issues;
}

export function validateCritique(payload: CritiquePayload): ValidationIssue[] {
  const issues: ValidationIssue[] = [];
  if (!Array.isArray(payload.findings) || payload.findings.length === 0) {
    issues.push({ field: "findings", message: "a critique needs at least one finding" });
    return issues;
  }
  for (const finding of payload.findings) {
    if (typeof finding.category !== "string" || finding.category.length === 0) {
      issues.push({ field: "findings", message: "every finding needs a category" });
      return issues;
    }
    if (typeof finding.text !== "string") {
      issues.push({ field: "findings", message: "finding text must be a string" });
      return issues;
    }
  }
  const noDefect = payload.findings.some((f) => f.category === NO_DEFECT);
  if (noDefect && payload.findings.length > 1) {
    issues.push({ field: "findings", message: "NoDefect excludes defect findings" });
  }
  if (noDefect && !(payload.suggestion ?? "").trim()) {
    issues.push({
      field: "suggestion",
      message: "a NoDefect verdict needs a suggestion for a defect-free instance",
    });
  }
  if (payload.target_turn !== undefined && (!Number.isInteger(payload.target_turn) || payload.target_turn < 0)) {
    issues.push({ field: "target_turn", message: "target_turn must be a non-negative integer" });
  }
  return issues;
}

export function validatePreview(payload: PreviewPayload): ValidationIssue[] {
  if (typeof payload.feedback !== "string" || !payload.feedback.trim()) {
    return [{ field: "feedback", message: "preview needs feedback text" }];
  }
  return [];
}

export function formatIssues(issues: ValidationIssue[]): string {
  return issues.map((i) => i.message).join("; ");
}
