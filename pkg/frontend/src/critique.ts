/**
 * Critique workspace: six regions arranged as
 *
 *   instruction | reference
 *   candidate   | preview
 *   cells       | suggestions
 *
 * with one critique cell per defect category plus the suggestion cell.
 * Submit validates the NoDefect rule client-side before any network send.
 */

import { ApiError, PayloadError, StudioApi } from "./api.js";
import { clearDraft, loadDraft, saveDraft } from "./drafts.js";
import { el } from "./dom.js";
import { formatIssues, validateCritique } from "./schema.js";
import { CritiqueBundle, CritiqueFinding, CritiquePayload } from "./types.js";

export const CRITIQUE_LAYOUT: [string, string][] = [
  ["instruction", "reference"],
  ["candidate", "preview"],
  ["cells", "suggestions"],
];

export const SUGGESTION_CELL_LABEL = "Suggestion for Defect-free Instance";

export interface CritiqueViewDeps {
  api: StudioApi;
  storage?: Storage;
  onSubmitted?: () => void;
}

export interface CritiqueView {
  root: HTMLElement;
  collect(): CritiquePayload;
  isReadOnly(): boolean;
}

function region(name: string, children: (Node | string)[]): HTMLElement {
  const node = el("div", { class: "region", "data-region": name });
  node.style.gridArea = name;
  node.append(...children);
  return node;
}

export function renderCritiqueView(
  container: HTMLElement,
  bundle: CritiqueBundle,
  deps: CritiqueViewDeps,
): CritiqueView {
  const { api } = deps;
  const storage = deps.storage ?? localStorage;
  const taskId = bundle.task.task_id;
  let readOnly = bundle.task.status !== "open";

  const cells = new Map<string, HTMLTextAreaElement>();
  const suggestionArea = el("textarea", { "data-cell": "suggestion" });
  const validation = el("div", { class: "validation-message", role: "alert" });
  const banner = el("div", { class: "banner", role: "alert", hidden: "" });
  const submitButton = el("button", { class: "primary", text: "Submit critique" });

  // --- instruction (top left) ---
  const personaBits = ["user_profile", "data_vis_expertise", "usage_scenario"]
    .map((key) => bundle.persona?.[key])
    .filter((v) => typeof v === "string" && v.length > 0)
    .join(" / ");
  const instructionRegion = region("instruction", [
    el("h3", { text: "Instruction" }),
    el("p", { class: "status-line", text: personaBits }),
    el("p", { text: bundle.instruction }),
  ]);

  // --- candidate render (middle left) ---
  const lastTurn = bundle.turns[bundle.turns.length - 1];
  const candidateChildren: (Node | string)[] = [el("h3", { text: "Candidate (model)" })];
  if (bundle.candidate_render_url) {
    candidateChildren.push(el("img", { src: api.resolve(bundle.candidate_render_url), alt: "candidate render" }));
  } else {
    candidateChildren.push(el("p", { class: "status-line", text: "no candidate render" }));
  }
  if (lastTurn) {
    candidateChildren.push(el("p", { class: "status-line", text: `produced by ${lastTurn.producer_model}` }));
    if (lastTurn.runtime_errors.length) {
      candidateChildren.push(
        el("p", { class: "runtime-errors", text: `runtime errors: ${lastTurn.runtime_errors.join("; ")}` }),
      );
    }
  }
  const candidateRegion = region("candidate", candidateChildren);

  // --- reference render (top right) ---
  const referenceChildren: (Node | string)[] = [el("h3", { text: "Reference (human)" })];
  if (bundle.reference_render_url) {
    referenceChildren.push(el("img", { src: api.resolve(bundle.reference_render_url), alt: "reference render" }));
  } else {
    referenceChildren.push(el("p", { class: "status-line", text: "no reference render" }));
  }
  const referenceRegion = region("reference", referenceChildren);

  // --- critique cells (bottom left) ---
  const cellsChildren: (Node | string)[] = [el("h3", { text: "Critique" })];
  for (const category of bundle.defect_categories) {
    const area = el("textarea", { "data-cell": category });
    cells.set(category, area);
    cellsChildren.push(el("div", { class: "cell" }, [el("label", { text: category }), area]));
  }
  cellsChildren.push(
    el("div", { class: "cell" }, [el("label", { text: SUGGESTION_CELL_LABEL }), suggestionArea]),
    validation,
    submitButton,
  );
  const cellsRegion = region("cells", cellsChildren);

  // --- model suggestions (bottom right) ---
  const suggestionList = el("ul");
  for (const text of bundle.suggestions) {
    const copyButton = el("button", { text: "copy" });
    copyButton.addEventListener("click", () => {
      if (readOnly) {
        return;
      }
      suggestionArea.value = suggestionArea.value ? `${suggestionArea.value}\n${text}` : text;
      persistDraft();
    });
    suggestionList.append(
      el("li", {}, [el("span", { class: "model-badge", text: "model-generated" }), text + " ", copyButton]),
    );
  }
  const suggestionsRegion = region("suggestions", [
    el("h3", { text: "Model suggestions" }),
    bundle.suggestions.length ? suggestionList : el("p", { class: "status-line", text: "none available" }),
  ]);

  // --- improved preview (middle right) ---
  const previewButton = el("button", { text: "Preview improvement" });
  const previewImage = el("img", { alt: "improved render", hidden: "" });
  const previewStatus = el("p", { class: "status-line" });
  const previewRegion = region("preview", [
    el("h3", { text: "Improved preview" }),
    previewButton,
    previewStatus,
    previewImage,
  ]);

  const gridNode = el("div", { class: "critique-grid" });
  gridNode.style.display = "grid";
  gridNode.style.gridTemplateColumns = "1fr 1fr";
  gridNode.style.gridTemplateAreas = CRITIQUE_LAYOUT.map((row) => `"${row.join(" ")}"`).join(" ");
  gridNode.append(instructionRegion, referenceRegion, candidateRegion, previewRegion, cellsRegion, suggestionsRegion);

  function collect(): CritiquePayload {
    const findings: CritiqueFinding[] = [];
    for (const [category, area] of cells) {
      const text = area.value.trim();
      if (text) {
        findings.push({ category, text });
      }
    }
    const payload: CritiquePayload = { findings };
    const suggestion = suggestionArea.value.trim();
    if (suggestion) {
      payload.suggestion = suggestion;
    }
    return payload;
  }

  function composeFeedback(): string {
    const payload = collect();
    const lines = payload.findings.map((f) => `${f.category}: ${f.text}`);
    if (payload.suggestion) {
      lines.push(`Suggestion: ${payload.suggestion}`);
    }
    return lines.join("\n");
  }

  function persistDraft(): void {
    const cellValues: Record<string, string> = {};
    for (const [category, area] of cells) {
      cellValues[category] = area.value;
    }
    saveDraft(taskId, { kind: "critique", cells: cellValues, suggestion: suggestionArea.value }, storage);
  }

  function markReadOnly(note: string): void {
    readOnly = true;
    submitButton.disabled = true;
    previewButton.disabled = true;
    for (const area of cells.values()) {
      area.disabled = true;
    }
    suggestionArea.disabled = true;
    validation.textContent = note;
  }

  function showBanner(message: string): void {
    banner.textContent = message;
    banner.hidden = false;
  }

  async function refreshFromServer(): Promise<void> {
    try {
      const fresh = await api.getCritiqueBundle(taskId);
      if (fresh.task.status !== "open") {
        markReadOnly(`submitted by ${fresh.task.annotator}`);
      }
    } catch (error) {
      showBanner(error instanceof Error ? error.message : String(error));
    }
  }

  async function submit(): Promise<void> {
    if (readOnly) {
      return;
    }
    const payload = collect();
    const issues = validateCritique(payload);
    if (issues.length) {
      validation.textContent = formatIssues(issues);
      return;
    }
    validation.textContent = "";
    submitButton.disabled = true;
    try {
      await api.submitCritique(taskId, payload);
      clearDraft(taskId, storage);
      markReadOnly("critique recorded");
      deps.onSubmitted?.();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        showBanner(error.detail);
        await refreshFromServer();
        if (!readOnly) {
          submitButton.disabled = false;
        }
      } else if (error instanceof ApiError || error instanceof PayloadError) {
        validation.textContent = error.message;
        submitButton.disabled = false;
      } else {
        showBanner(String(error));
        submitButton.disabled = false;
      }
    }
  }

  async function preview(): Promise<void> {
    const feedback = composeFeedback();
    if (!feedback.trim()) {
      previewStatus.textContent = "type feedback into a critique cell first";
      return;
    }
    previewButton.disabled = true;
    previewStatus.textContent = "rendering improvement...";
    try {
      const result = await api.requestPreview(taskId, { feedback });
      if (result.image_url) {
        previewImage.src = api.resolve(result.image_url);
        previewImage.hidden = false;
      }
      previewStatus.textContent = result.errors.length ? `errors: ${result.errors.join("; ")}` : "";
    } catch (error) {
      previewStatus.textContent = error instanceof Error ? error.message : String(error);
    } finally {
      if (!readOnly) {
        previewButton.disabled = false;
      }
    }
  }

  for (const area of [...cells.values(), suggestionArea]) {
    area.addEventListener("input", persistDraft);
  }
  submitButton.addEventListener("click", () => {
    void submit();
  });
  previewButton.addEventListener("click", () => {
    void preview();
  });

  container.replaceChildren(el("h2", { text: "Critique task" }), banner, gridNode);

  const draft = loadDraft(taskId, storage);
  if (draft?.kind === "critique" && !readOnly) {
    for (const [category, area] of cells) {
      area.value = draft.cells[category] ?? "";
    }
    suggestionArea.value = draft.suggestion;
  }
  if (readOnly) {
    const submitted = bundle.task.submission?.["critique"] as
      | { findings?: CritiqueFinding[]; suggestion?: string | null }
      | undefined;
    for (const finding of submitted?.findings ?? []) {
      const area = cells.get(finding.category);
      if (area) {
        area.value = finding.text;
      }
    }
    if (submitted?.suggestion) {
      suggestionArea.value = submitted.suggestion;
    }
    markReadOnly(`submitted by ${bundle.task.annotator}`);
  }

  return {
    root: container,
    collect,
    isReadOnly: () => readOnly,
  };
}
