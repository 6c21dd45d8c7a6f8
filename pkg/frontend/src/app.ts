/**
 * Shell: connect with an annotator token, list open tasks, and open the
 * view matching each task kind.
 */

import { ApiError, StudioApi } from "./api.js";
import { renderCritiqueView } from "./critique.js";
import { renderDedupView } from "./dedup.js";
import { el } from "./dom.js";
import { renderSelectionView } from "./selection.js";
import { TaskSummary } from "./types.js";

const TOKEN_KEY = "viscritic.token";

export interface AppOptions {
  baseUrl?: string;
  storage?: Storage;
  fetchFn?: typeof fetch;
}

function describe(task: TaskSummary): string {
  const about = task.about;
  if (task.kind === "select_round") {
    return `${about["typology_label"]} round, ${about["record_count"]} records`;
  }
  if (task.kind === "render_dedup") {
    return `candidate ${about["record_id"]} vs head ${about["cluster_id"]}`;
  }
  return `record ${about["record_id"]}`;
}

export function renderApp(root: HTMLElement, options: AppOptions = {}): void {
  const storage = options.storage ?? localStorage;

  function showConnect(message = ""): void {
    const tokenInput = el("input", {
      type: "password",
      placeholder: "annotator token",
      value: storage.getItem(TOKEN_KEY) ?? "",
    });
    const connectButton = el("button", { class: "primary", text: "Connect" });
    const note = el("p", { class: "status-line", text: message });
    connectButton.addEventListener("click", () => {
      storage.setItem(TOKEN_KEY, tokenInput.value);
      void showTasks(makeApi(tokenInput.value));
    });
    root.replaceChildren(el("h2", { text: "viscritic studio" }), note, tokenInput, " ", connectButton);
  }

  function makeApi(token: string): StudioApi {
    return new StudioApi({ baseUrl: options.baseUrl ?? "", token, fetchFn: options.fetchFn });
  }

  async function showTasks(api: StudioApi): Promise<void> {
    let health;
    let tasks: TaskSummary[];
    try {
      health = await api.health();
      tasks = await api.listTasks();
    } catch (error) {
      const reason = error instanceof ApiError ? error.detail : String(error);
      showConnect(`connection failed: ${reason}`);
      return;
    }
    const table = el("table", { class: "task-table" });
    table.append(
      el("thead", {}, [
        el("tr", {}, [el("th", { text: "kind" }), el("th", { text: "about" }), el("th", { text: "status" })]),
      ]),
    );
    const tbody = el("tbody");
    for (const task of tasks) {
      const row = el("tr", { "data-task-id": task.task_id }, [
        el("td", { text: task.kind }),
        el("td", { text: describe(task) }),
        el("td", { text: task.status }),
      ]);
      row.addEventListener("click", () => {
        void openTask(api, task);
      });
      tbody.append(row);
    }
    table.append(tbody);
    root.replaceChildren(
      el("h2", { text: "Open tasks" }),
      el("p", {
        class: "status-line",
        text: `${health.records} records, ${health.tasks} tasks total`,
      }),
      tasks.length ? table : el("p", { text: "No open tasks." }),
    );
  }

  async function openTask(api: StudioApi, task: TaskSummary): Promise<void> {
    const backButton = el("button", { text: "Back to tasks" });
    backButton.addEventListener("click", () => {
      void showTasks(api);
    });
    const view = el("div");
    root.replaceChildren(backButton, view);
    const done = () => {
      // leave the submitted view on screen; the list refresh happens on back
    };
    try {
      if (task.kind === "select_round") {
        renderSelectionView(view, await api.getSelectionBundle(task.task_id), { api, onSubmitted: done });
      } else if (task.kind === "render_dedup") {
        renderDedupView(view, await api.getDedupBundle(task.task_id), { api, onSubmitted: done });
      } else {
        renderCritiqueView(view, await api.getCritiqueBundle(task.task_id), { api, onSubmitted: done });
      }
    } catch (error) {
      const reason = error instanceof ApiError ? error.detail : String(error);
      view.replaceChildren(el("div", { class: "banner", role: "alert", text: `could not load task: ${reason}` }));
    }
  }

  showConnect();
}
