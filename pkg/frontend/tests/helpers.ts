/** Shared fixtures: scripted fetch transport, bundles, in-memory storage. */

import { StudioApi } from "../src/api.js";
import { CritiqueBundle, SelectionBundle, TaskEnvelope, TaskKind } from "../src/types.js";

export interface RecordedRequest {
  method: string;
  path: string;
  body: unknown;
}

export interface RouteReply {
  status?: number;
  json?: unknown;
}

export type RouteHandler = (request: RecordedRequest) => RouteReply;

export interface ScriptedTransport {
  fetchFn: typeof fetch;
  requests: RecordedRequest[];
}

/** A fetch stand-in that matches "METHOD /path" keys and records every call. */
export function scriptedFetch(routes: Record<string, RouteHandler>): ScriptedTransport {
  const requests: RecordedRequest[] = [];
  const fetchFn = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    const request = { method, path, body };
    requests.push(request);
    const handler = routes[`${method} ${path.split("?")[0]}`];
    if (!handler) {
      return new Response(JSON.stringify({ detail: `no route ${method} ${path}` }), { status: 404 });
    }
    const reply = handler(request);
    return new Response(JSON.stringify(reply.json ?? {}), { status: reply.status ?? 200 });
  }) as typeof fetch;
  return { fetchFn, requests };
}

export function makeApi(transport: ScriptedTransport, token = "tok-test"): StudioApi {
  return new StudioApi({ token, fetchFn: transport.fetchFn });
}

export function makeTask(kind: TaskKind, payload: Record<string, unknown>, over: Partial<TaskEnvelope> = {}): TaskEnvelope {
  return {
    task_id: "task-1",
    kind,
    payload,
    status: "open",
    annotator: "",
    created_ts: 0,
    submitted_ts: null,
    submission: null,
    ...over,
  };
}

export function makeSelectionBundle(count: number, over: Partial<TaskEnvelope> = {}): SelectionBundle {
  const ids = Array.from({ length: count }, (_, i) => `rec-${String(i).padStart(2, "0")}`);
  return {
    task: makeTask("select_round", { round_id: "round-0", typology_label: "Bar", record_ids: ids }, over),
    records: ids.map((record_id, i) => ({
      record_id,
      render_url: i % 10 === 9 ? null : `/blobs/aa/${record_id}.png`,
    })),
  };
}

export const CATEGORIES = ["InstructionCompliance", "VisualClarity", "SemanticalReadability", "NoDefect"];

export function makeCritiqueBundle(over: Partial<CritiqueBundle> = {}): CritiqueBundle {
  return {
    task: makeTask("critique", { record_id: "rec-00", suggestions: [] }),
    record_id: "rec-00",
    instruction: "draw the quarterly totals as bars",
    persona: { user_profile: "analyst", data_vis_expertise: "Medium", usage_scenario: "weekly report" },
    reference_render_url: "/blobs/aa/ref.png",
    candidate_render_url: "/blobs/aa/cand.png",
    suggestions: ["label both axes", "add a legend", "increase margins"],
    defect_categories: [...CATEGORIES],
    turns: [
      {
        turn_index: 0,
        producer_model: "mock-generate",
        code: "<html></html>",
        render_url: "/blobs/aa/cand.png",
        runtime_errors: [],
        feedback_used: null,
      },
    ],
    ...over,
  };
}

/** Isolated Storage so draft tests cannot leak into each other. */
export function memStorage(): Storage {
  const data = new Map<string, string>();
  return {
    get length() {
      return data.size;
    },
    clear: () => data.clear(),
    getItem: (key: string) => (data.has(key) ? data.get(key)! : null),
    key: (index: number) => [...data.keys()][index] ?? null,
    removeItem: (key: string) => {
      data.delete(key);
    },
    setItem: (key: string, value: string) => {
      data.set(key, value);
    },
  } as Storage;
}

export function tick(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
