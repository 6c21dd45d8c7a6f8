/**
 * Render-dedup review: candidate and cluster head side by side with a
 * keep/drop decision.
 */

import { ApiError, StudioApi } from "./api.js";
import { el } from "./dom.js";
import { DedupBundle, DedupSide } from "./types.js";

export interface DedupViewDeps {
  api: StudioApi;
  onSubmitted?: () => void;
}

function sidePanel(api: StudioApi, title: string, side: DedupSide): HTMLElement {
  const children: (Node | string)[] = [el("h3", { text: `${title}: ${side.record_id}` })];
  if (side.render_url) {
    children.push(el("img", { src: api.resolve(side.render_url), alt: title }));
  } else {
    children.push(el("p", { class: "status-line", text: "no render" }));
  }
  return el("div", { class: "region" }, children);
}

export function renderDedupView(container: HTMLElement, bundle: DedupBundle, deps: DedupViewDeps): void {
  const { api } = deps;
  const banner = el("div", { class: "banner", role: "alert", hidden: "" });
  const statusLine = el("p", { class: "status-line" });
  const keepButton = el("button", { class: "primary", text: "Keep as distinct" });
  const dropButton = el("button", { text: "Drop as duplicate" });
  const pair = el("div", { class: "dedup-pair" }, [
    sidePanel(api, "Candidate", bundle.candidate),
    sidePanel(api, "Cluster head", bundle.head),
  ]);

  const readOnly = bundle.task.status !== "open";
  if (readOnly) {
    keepButton.disabled = true;
    dropButton.disabled = true;
    statusLine.textContent = `submitted by ${bundle.task.annotator}`;
  }

  async function decide(keep: boolean): Promise<void> {
    keepButton.disabled = true;
    dropButton.disabled = true;
    try {
      await api.submitDedup(bundle.task.task_id, keep);
      statusLine.textContent = keep ? "kept" : "dropped";
      deps.onSubmitted?.();
    } catch (error) {
      banner.textContent = error instanceof ApiError ? error.detail : String(error);
      banner.hidden = false;
      if (!(error instanceof ApiError && error.status === 409)) {
        keepButton.disabled = false;
        dropButton.disabled = false;
      }
    }
  }

  keepButton.addEventListener("click", () => {
    void decide(true);
  });
  dropButton.addEventListener("click", () => {
    void decide(false);
  });

  container.replaceChildren(
    el("h2", { text: "Duplicate review" }),
    statusLine,
    banner,
    pair,
    el("div", {}, [keepButton, " ", dropButton]),
  );
}
