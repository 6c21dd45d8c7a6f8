/**
 * Selection round view: a grid of same-typology thumbnails where clicking
 * (or space / number keys) toggles a yellow-bordered selection, and submit
 * posts the chosen record ids.
 */

import { ApiError, PayloadError, StudioApi } from "./api.js";
import { clearDraft, loadDraft, saveDraft } from "./drafts.js";
import { el } from "./dom.js";
import { SelectionBundle } from "./types.js";

export const SELECTED_BORDER = "3px solid #f5c518";

export interface SelectionViewDeps {
  api: StudioApi;
  confirmFn?: (message: string) => boolean;
  storage?: Storage;
  onSubmitted?: () => void;
}

export interface SelectionView {
  root: HTMLElement;
  selectedIds(): string[];
  isReadOnly(): boolean;
}

export function renderSelectionView(
  container: HTMLElement,
  bundle: SelectionBundle,
  deps: SelectionViewDeps,
): SelectionView {
  const { api } = deps;
  const storage = deps.storage ?? localStorage;
  const confirmFn = deps.confirmFn ?? ((message: string) => window.confirm(message));
  const taskId = bundle.task.task_id;
  const selected = new Set<string>();
  let readOnly = bundle.task.status !== "open";

  const label = String(bundle.task.payload["typology_label"] ?? "");
  const heading = el("h2", { text: `Selection round: ${label}` });
  const statusLine = el("p", { class: "status-line" });
  const banner = el("div", { class: "banner", role: "alert", hidden: "" });
  const grid = el("div", { class: "selection-grid" });
  const submitButton = el("button", { class: "primary", text: "Submit selections" });

  const thumbs = new Map<string, HTMLElement>();
  for (const record of bundle.records) {
    const thumb = el("div", {
      class: "thumb",
      tabindex: "0",
      "data-record-id": record.record_id,
    });
    if (record.render_url) {
      thumb.append(el("img", { src: api.resolve(record.render_url), alt: record.record_id }));
    } else {
      thumb.append(el("span", { class: "no-render", text: "no render" }));
    }
    thumbs.set(record.record_id, thumb);
    grid.append(thumb);
  }

  function showBanner(message: string): void {
    banner.textContent = message;
    banner.hidden = false;
  }

  function updateStatus(note = ""): void {
    const suffix = note ? ` — ${note}` : "";
    statusLine.textContent = `${selected.size} of ${bundle.records.length} selected${suffix}`;
  }

  function setSelected(recordId: string, on: boolean): void {
    const thumb = thumbs.get(recordId);
    if (!thumb) {
      return;
    }
    if (on) {
      selected.add(recordId);
      thumb.classList.add("selected");
      thumb.style.border = SELECTED_BORDER;
    } else {
      selected.delete(recordId);
      thumb.classList.remove("selected");
      thumb.style.border = "";
    }
  }

  function toggle(recordId: string): void {
    if (readOnly) {
      return;
    }
    setSelected(recordId, !selected.has(recordId));
    saveDraft(taskId, { kind: "selection", selectedIds: orderedSelection() }, storage);
    updateStatus();
  }

  function orderedSelection(): string[] {
    return bundle.records.map((r) => r.record_id).filter((id) => selected.has(id));
  }

  function markSubmitted(note: string): void {
    readOnly = true;
    submitButton.disabled = true;
    for (const thumb of thumbs.values()) {
      thumb.dataset.readonly = "true";
    }
    updateStatus(note);
  }

  async function refreshFromServer(): Promise<void> {
    try {
      const fresh = await api.getSelectionBundle(taskId);
      if (fresh.task.status !== "open") {
        const ids = (fresh.task.submission?.["selected_ids"] as string[] | undefined) ?? [];
        for (const id of thumbs.keys()) {
          setSelected(id, ids.includes(id));
        }
        markSubmitted(`submitted by ${fresh.task.annotator}`);
      }
    } catch (error) {
      showBanner(error instanceof Error ? error.message : String(error));
    }
  }

  async function submit(): Promise<void> {
    const ids = orderedSelection();
    if (ids.length === 0 && !confirmFn("Submit this round with no selections?")) {
      return;
    }
    submitButton.disabled = true;
    try {
      await api.submitSelection(taskId, { selected_ids: ids });
      clearDraft(taskId, storage);
      markSubmitted("submitted");
      deps.onSubmitted?.();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        showBanner(error.detail);
        await refreshFromServer();
        if (!readOnly) {
          submitButton.disabled = false;
        }
      } else if (error instanceof ApiError || error instanceof PayloadError) {
        // non-destructive: the grid and current selections stay editable
        showBanner(error.message);
        submitButton.disabled = false;
      } else {
        showBanner(String(error));
        submitButton.disabled = false;
      }
    }
  }

  grid.addEventListener("click", (event) => {
    const thumb = (event.target as HTMLElement).closest<HTMLElement>(".thumb");
    if (thumb?.dataset.recordId) {
      toggle(thumb.dataset.recordId);
    }
  });

  grid.addEventListener("keydown", (event) => {
    const key = event.key;
    const items = [...grid.querySelectorAll<HTMLElement>(".thumb")];
    if (key === " ") {
      const active = document.activeElement?.closest?.(".thumb") as HTMLElement | null;
      if (active?.dataset.recordId) {
        event.preventDefault();
        toggle(active.dataset.recordId);
      }
    } else if (key >= "1" && key <= "9") {
      const thumb = items[Number(key) - 1];
      if (thumb?.dataset.recordId) {
        toggle(thumb.dataset.recordId);
      }
    } else if (key === "ArrowRight" || key === "ArrowLeft") {
      const active = document.activeElement?.closest?.(".thumb") as HTMLElement | null;
      const index = active ? items.indexOf(active) : -1;
      const next = items[index + (key === "ArrowRight" ? 1 : -1)];
      next?.focus();
    }
  });

  submitButton.addEventListener("click", () => {
    void submit();
  });

  container.replaceChildren(heading, statusLine, banner, grid, submitButton);

  // restore a saved draft, then reflect an already-submitted task read-only
  const draft = loadDraft(taskId, storage);
  if (draft?.kind === "selection" && !readOnly) {
    for (const id of draft.selectedIds) {
      setSelected(id, true);
    }
  }
  if (readOnly) {
    const ids = (bundle.task.submission?.["selected_ids"] as string[] | undefined) ?? [];
    for (const id of ids) {
      setSelected(id, true);
    }
    markSubmitted(`submitted by ${bundle.task.annotator}`);
  } else {
    updateStatus();
  }

  return {
    root: container,
    selectedIds: orderedSelection,
    isReadOnly: () => readOnly,
  };
}
