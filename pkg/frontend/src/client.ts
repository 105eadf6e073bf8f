/**
 * Thin typed client for the trajectory-response prediction service.
 *
 * Every call goes over HTTP; this module performs no prediction math of
 * its own. Errors are normalized into ServiceError so callers can tell
 * "service refused the request" (has a status) from "service unreachable"
 * (no status) without string matching.
 */

import type { PredictRequest, PredictResponse, Scenario, ScenarioSummary, ServiceInfo } from "./types.js";

export class ServiceError extends Error {
  /** HTTP status when the service answered; undefined when unreachable */
  readonly status?: number;

  constructor(message: string, status?: number) {
    super(message);
    this.name = "ServiceError";
    this.status = status;
  }
}

/** True when the failure was a cancelled in-flight request, not a real error. */
export function isAbort(err: unknown): boolean {
  return err instanceof DOMException && err.name === "AbortError";
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let res: Response;
  try {
    res = await fetch(url, init);
  } catch (err) {
    if (isAbort(err)) throw err;
    const detail = err instanceof Error ? err.message : String(err);
    throw new ServiceError(`service unreachable: ${detail}`);
  }
  if (!res.ok) {
    let detail = `${res.status} ${res.statusText}`;
    try {
      const body: unknown = await res.json();
      if (body && typeof body === "object" && "detail" in body) {
        detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
      }
    } catch {
      // non-JSON error body; keep the status line
    }
    throw new ServiceError(detail, res.status);
  }
  return (await res.json()) as T;
}

export class PredictionClient {
  readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  info(): Promise<ServiceInfo> {
    return request<ServiceInfo>(`${this.baseUrl}/info`);
  }

  scenarios(): Promise<ScenarioSummary[]> {
    return request<ScenarioSummary[]>(`${this.baseUrl}/scenarios`);
  }

  scenario(id: string): Promise<Scenario> {
    return request<Scenario>(`${this.baseUrl}/scenarios/${encodeURIComponent(id)}`);
  }

  predict(body: PredictRequest, signal?: AbortSignal): Promise<PredictResponse> {
    return request<PredictResponse>(`${this.baseUrl}/predict`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
  }
}
