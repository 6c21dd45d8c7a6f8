/**
 * Typed client for the studio HTTP API. The only way the UI reaches the
 * pipeline; submit methods validate payloads before any network send.
 */

import {
  formatIssues,
  validateCritique,
  validatePreview,
  validateSelection,
  ValidationIssue,
} from "./schema.js";
import {
  CritiqueBundle,
  CritiquePayload,
  DedupBundle,
  HealthInfo,
  PreviewPayload,
  PreviewResult,
  SelectionBundle,
  SelectionPayload,
  TaskSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class PayloadError extends Error {
  constructor(public issues: ValidationIssue[]) {
    super(formatIssues(issues));
  }
}

export interface StudioApiOptions {
  baseUrl?: string;
  token?: string;
  fetchFn?: typeof fetch;
}

export class StudioApi {
  private baseUrl: string;
  private token: string;
  private fetchFn: typeof fetch;

  constructor(options: StudioApiOptions = {}) {
    this.baseUrl = (options.baseUrl ?? "").replace(/\/$/, "");
    this.token = options.token ?? "";
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
  }

  /** Absolute form of a server-relative path such as a render_url. */
  resolve(path: string): string {
    return path.startsWith("/") ? this.baseUrl + path : path;
  }

  async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (this.token) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
    }
    const response = await this.fetchFn(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    let parsed: unknown = null;
    try {
      parsed = text ? JSON.parse(text) : null;
    } catch {
      parsed = null;
    }
    if (!response.ok) {
      const detail =
        parsed !== null && typeof parsed === "object" && "detail" in parsed
          ? String((parsed as { detail: unknown }).detail)
          : text || response.statusText;
      throw new ApiError(response.status, detail);
    }
    return parsed as T;
  }

  health(): Promise<HealthInfo> {
    return this.request("GET", "/health");
  }

  listTasks(params: { kind?: string; status?: string } = {}): Promise<TaskSummary[]> {
    const query = new URLSearchParams();
    if (params.kind) query.set("kind", params.kind);
    if (params.status) query.set("status", params.status);
    const suffix = query.toString() ? `?${query}` : "";
    return this.request("GET", `/tasks${suffix}`);
  }

  getSelectionBundle(taskId: string): Promise<SelectionBundle> {
    return this.request("GET", `/tasks/${taskId}`);
  }

  getDedupBundle(taskId: string): Promise<DedupBundle> {
    return this.request("GET", `/tasks/${taskId}`);
  }

  getCritiqueBundle(taskId: string): Promise<CritiqueBundle> {
    return this.request("GET", `/tasks/${taskId}`);
  }

  submitSelection(taskId: string, payload: SelectionPayload): Promise<{ task_id: string; selected: number }> {
    const issues = validateSelection(payload);
    if (issues.length) {
      throw new PayloadError(issues);
    }
    return this.request("POST", `/tasks/${taskId}/selection`, payload);
  }

  submitDedup(taskId: string, keep: boolean): Promise<{ task_id: string; kept: boolean }> {
    return this.request("POST", `/tasks/${taskId}/dedup`, { keep });
  }

  submitCritique(
    taskId: string,
    payload: CritiquePayload,
  ): Promise<{ task_id: string; record_id: string; stage: string }> {
    const issues = validateCritique(payload);
    if (issues.length) {
      throw new PayloadError(issues);
    }
    return this.request("POST", `/tasks/${taskId}/critique`, payload);
  }

  requestPreview(taskId: string, payload: PreviewPayload): Promise<PreviewResult> {
    const issues = validatePreview(payload);
    if (issues.length) {
      throw new PayloadError(issues);
    }
    return this.request("POST", `/tasks/${taskId}/preview`, payload);
  }
}
