/**
 * Per-task draft persistence so annotations survive reloads and disconnects.
 *
 * Drafts live in localStorage keyed by task id and are only ever read back
 * into the form; nothing here submits anything.
 */

const PREFIX = "viscritic.draft.";

export interface SelectionDraft {
  kind: "selection";
  selectedIds: string[];
}

export interface CritiqueDraft {
  kind: "critique";
  cells: Record<string, string>;
  suggestion: string;
}

export type Draft = SelectionDraft | CritiqueDraft;

export function saveDraft(taskId: string, draft: Draft, storage: Storage = localStorage): void {
  try {
    storage.setItem(PREFIX + taskId, JSON.stringify(draft));
  } catch {
    // storage full or unavailable: drafts are best-effort
  }
}

export function loadDraft(taskId: string, storage: Storage = localStorage): Draft | null {
  const raw = storage.getItem(PREFIX + taskId);
  if (raw === null) {
    return null;
  }
  try {
    const parsed = JSON.parse(raw) as Draft;
    if (parsed && (parsed.kind === "selection" || parsed.kind === "critique")) {
      return parsed;
    }
    return null;
  } catch {
    return null;
  }
}

export function clearDraft(taskId: string, storage: Storage = localStorage): void {
  storage.removeItem(PREFIX + taskId);
}
