// Thin client for the session service HTTP/JSON API.

import {
  ApiErrorBody,
  ControlRecord,
  CreateSessionResponse,
  ModelInfo,
  SessionStateResponse,
  StepResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (resp.ok) {
    return (await resp.json()) as T;
  }
  let body: ApiErrorBody = { code: "unknown", message: resp.statusText };
  try {
    body = (await resp.json()) as ApiErrorBody;
  } catch {
    /* non-JSON error body; keep the status text */
  }
  throw new ApiError(resp.status, body.code, body.message);
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}/api/v1${path}`;
  }

  async listModels(): Promise<ModelInfo[]> {
    const resp = await this.fetchFn(this.url("/models"));
    const body = await parseOrThrow<{ models: ModelInfo[] }>(resp);
    return body.models;
  }

  async createSession(modelId: string, frameB64: string): Promise<CreateSessionResponse> {
    const resp = await this.fetchFn(this.url("/sessions"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ model_id: modelId, frame: frameB64 }),
    });
    return parseOrThrow<CreateSessionResponse>(resp);
  }

  async step(sessionId: string, control: ControlRecord): Promise<StepResponse> {
    const resp = await this.fetchFn(this.url(`/sessions/${sessionId}/step`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(control),
    });
    return parseOrThrow<StepResponse>(resp);
  }

  async getState(sessionId: string): Promise<SessionStateResponse> {
    const resp = await this.fetchFn(this.url(`/sessions/${sessionId}`));
    return parseOrThrow<SessionStateResponse>(resp);
  }

  async deleteSession(sessionId: string): Promise<void> {
    const resp = await this.fetchFn(this.url(`/sessions/${sessionId}`), {
      method: "DELETE",
    });
    await parseOrThrow<{ ok: boolean }>(resp);
  }
}
