import { beforeEach, describe, expect, it } from "vitest";

import { CRITIQUE_LAYOUT, renderCritiqueView, SUGGESTION_CELL_LABEL } from "../src/critique.js";
import { CATEGORIES, makeApi, makeCritiqueBundle, memStorage, scriptedFetch, tick } from "./helpers.js";

function mount() {
  const container = document.createElement("div");
  document.body.append(container);
  return container;
}

function cell(root: HTMLElement, category: string): HTMLTextAreaElement {
  return root.querySelector<HTMLTextAreaElement>(`textarea[data-cell="${category}"]`)!;
}

function submitButton(root: HTMLElement): HTMLButtonElement {
  return [...root.querySelectorAll("button")].find((b) => b.textContent === "Submit critique")!;
}

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("critique workspace layout", () => {
  it("renders the six regions in the documented grid positions", () => {
    const transport = scriptedFetch({});
    const view = renderCritiqueView(mount(), makeCritiqueBundle(), {
      api: makeApi(transport),
      storage: memStorage(),
    });

    const grid = view.root.querySelector<HTMLElement>(".critique-grid")!;
    const regions = [...grid.querySelectorAll<HTMLElement>("[data-region]")];
    const names = regions.map((r) => r.dataset.region).sort();
    expect(names).toEqual(["candidate", "cells", "instruction", "preview", "reference", "suggestions"]);

    // every region is pinned to the grid area bearing its own name
    for (const node of regions) {
      expect(node.style.gridArea).toBe(node.dataset.region);
    }

    // and the grid template places those areas as documented:
    // instruction top-left, reference top-right, candidate middle-left,
    // preview middle-right, cells bottom-left, suggestions bottom-right
    const rows = [...grid.style.gridTemplateAreas.matchAll(/"([^"]+)"/g)].map((m) => m[1].trim().split(/\s+/));
    expect(rows).toEqual(CRITIQUE_LAYOUT);
    expect(rows[0]).toEqual(["instruction", "reference"]);
    expect(rows[1]).toEqual(["candidate", "preview"]);
    expect(rows[2]).toEqual(["cells", "suggestions"]);
  });

  it("contains one critique cell per defect category plus the suggestion cell", () => {
    const transport = scriptedFetch({});
    const view = renderCritiqueView(mount(), makeCritiqueBundle(), {
      api: makeApi(transport),
      storage: memStorage(),
    });
    for (const category of CATEGORIES) {
      expect(cell(view.root, category)).toBeTruthy();
    }
    expect(cell(view.root, "suggestion")).toBeTruthy();
    const labels = [...view.root.querySelectorAll("label")].map((l) => l.textContent);
    expect(labels).toContain(SUGGESTION_CELL_LABEL);
  });

  it("labels every model suggestion as model-generated and copies into the suggestion cell", () => {
    const transport = scriptedFetch({});
    const view = renderCritiqueView(mount(), makeCritiqueBundle(), {
      api: makeApi(transport),
      storage: memStorage(),
    });
    const badges = view.root.querySelectorAll(".model-badge");
    expect(badges).toHaveLength(3);
    const copyButtons = [...view.root.querySelectorAll("button")].filter((b) => b.textContent === "copy");
    copyButtons[0].click();
    expect(cell(view.root, "suggestion").value).toBe("label both axes");
    copyButtons[1].click();
    expect(cell(view.root, "suggestion").value).toBe("label both axes\nadd a legend");
  });
});

describe("critique submit rules", () => {
  it("blocks a NoDefect verdict without a suggestion before any network send", async () => {
    const transport = scriptedFetch({
      "POST /tasks/task-1/critique": () => ({ json: {} }),
    });
    const view = renderCritiqueView(mount(), makeCritiqueBundle(), {
      api: makeApi(transport),
      storage: memStorage(),
    });
    cell(view.root, "NoDefect").value = "looks right";
    submitButton(view.root).click();
    await tick();
    expect(transport.requests).toHaveLength(0);
    const message = view.root.querySelector<HTMLElement>(".validation-message")!;
    expect(message.textContent).toContain("suggestion");
    expect(view.isReadOnly()).toBe(false);
  });

  it("blocks NoDefect combined with defect findings", async () => {
    const transport = scriptedFetch({});
    const view = renderCritiqueView(mount(), makeCritiqueBundle(), {
      api: makeApi(transport),
      storage: memStorage(),
    });
    cell(view.root, "NoDefect").value = "fine";
    cell(view.root, "VisualClarity").value = "cramped";
    cell(view.root, "suggestion").value = "n/a";
    submitButton(view.root).click();
    await tick();
    expect(transport.requests).toHaveLength(0);
    expect(view.root.querySelector(".validation-message")!.textContent).toContain("excludes");
  });

  it("posts the exact findings payload for a defect critique", async () => {
    const transport = scriptedFetch({
      "POST /tasks/task-1/critique": () => ({
        json: { task_id: "task-1", record_id: "rec-00", stage: "Critiqued" },
      }),
    });
    const view = renderCritiqueView(mount(), makeCritiqueBundle(), {
      api: makeApi(transport),
      storage: memStorage(),
    });
    cell(view.root, "VisualClarity").value = "  legend overlaps bars  ";
    cell(view.root, "InstructionCompliance").value = "missing second series";
    submitButton(view.root).click();
    await tick();
    expect(transport.requests).toHaveLength(1);
    expect(transport.requests[0].body).toEqual({
      findings: [
        { category: "InstructionCompliance", text: "missing second series" },
        { category: "VisualClarity", text: "legend overlaps bars" },
      ],
    });
    expect(view.isReadOnly()).toBe(true);
    expect(cell(view.root, "VisualClarity").disabled).toBe(true);
  });

  it("sends NoDefect with its suggestion once the rule is satisfied", async () => {
    const transport = scriptedFetch({
      "POST /tasks/task-1/critique": () => ({
        json: { task_id: "task-1", record_id: "rec-00", stage: "Critiqued" },
      }),
    });
    const view = renderCritiqueView(mount(), makeCritiqueBundle(), {
      api: makeApi(transport),
      storage: memStorage(),
    });
    cell(view.root, "NoDefect").value = "matches the instruction";
    cell(view.root, "suggestion").value = "offer a colorblind palette";
    submitButton(view.root).click();
    await tick();
    expect(transport.requests[0].body).toEqual({
      findings: [{ category: "NoDefect", text: "matches the instruction" }],
      suggestion: "offer a colorblind palette",
    });
  });

  it("restores a critique draft after a reload", () => {
    const storage = memStorage();
    const transport = scriptedFetch({});
    const first = renderCritiqueView(mount(), makeCritiqueBundle(), { api: makeApi(transport), storage });
    cell(first.root, "SemanticalReadability").value = "axis units unclear";
    cell(first.root, "SemanticalReadability").dispatchEvent(new Event("input", { bubbles: true }));
    cell(first.root, "suggestion").value = "annotate units";
    cell(first.root, "suggestion").dispatchEvent(new Event("input", { bubbles: true }));
    document.body.innerHTML = "";
    const second = renderCritiqueView(mount(), makeCritiqueBundle(), { api: makeApi(transport), storage });
    expect(cell(second.root, "SemanticalReadability").value).toBe("axis units unclear");
    expect(cell(second.root, "suggestion").value).toBe("annotate units");
    expect(second.isReadOnly()).toBe(false);
  });

  it("requests an improved preview from the typed feedback", async () => {
    const transport = scriptedFetch({
      "POST /tasks/task-1/preview": (request) => ({
        json: {
          record_id: "rec-00",
          feedback_hash: "aa",
          image_url: "/blobs/bb/improved.png",
          code: "<html></html>",
          errors: [],
          cached: false,
          echo: request.body,
        },
      }),
    });
    const view = renderCritiqueView(mount(), makeCritiqueBundle(), {
      api: makeApi(transport),
      storage: memStorage(),
    });
    const previewButton = [...view.root.querySelectorAll("button")].find(
      (b) => b.textContent === "Preview improvement",
    )!;
    previewButton.click();
    await tick();
    expect(transport.requests).toHaveLength(0);
    expect(view.root.querySelector<HTMLElement>("[data-region=preview] .status-line")!.textContent).toContain(
      "feedback",
    );

    cell(view.root, "VisualClarity").value = "bars too thin";
    previewButton.click();
    await tick();
    expect(transport.requests).toHaveLength(1);
    expect(transport.requests[0].body).toEqual({ feedback: "VisualClarity: bars too thin" });
    const image = view.root.querySelector<HTMLImageElement>("[data-region=preview] img")!;
    expect(image.hidden).toBe(false);
    expect(image.getAttribute("src")).toBe("/blobs/bb/improved.png");
  });

  it("goes read-only when the server reports a concurrent submit", async () => {
    const taken = makeCritiqueBundle();
    taken.task = { ...taken.task, status: "submitted", annotator: "robin" };
    const transport = scriptedFetch({
      "POST /tasks/task-1/critique": () => ({ status: 409, json: { detail: "task task-1 already submitted" } }),
      "GET /tasks/task-1": () => ({ json: taken }),
    });
    const view = renderCritiqueView(mount(), makeCritiqueBundle(), {
      api: makeApi(transport),
      storage: memStorage(),
    });
    cell(view.root, "VisualClarity").value = "cramped";
    submitButton(view.root).click();
    await tick();
    expect(view.isReadOnly()).toBe(true);
    expect(view.root.querySelector<HTMLElement>(".validation-message")!.textContent).toContain("robin");
  });

  it("renders a submitted task read-only showing the stored critique", () => {
    const transport = scriptedFetch({});
    const bundle = makeCritiqueBundle();
    bundle.task = {
      ...bundle.task,
      status: "submitted",
      annotator: "casey",
      submission: {
        critique: {
          findings: [{ category: "VisualClarity", text: "legend overlaps" }],
          suggestion: null,
        },
      },
    };
    const view = renderCritiqueView(mount(), bundle, { api: makeApi(transport), storage: memStorage() });
    expect(view.isReadOnly()).toBe(true);
    expect(cell(view.root, "VisualClarity").value).toBe("legend overlaps");
    expect(cell(view.root, "VisualClarity").disabled).toBe(true);
    expect(submitButton(view.root).disabled).toBe(true);
  });
});
