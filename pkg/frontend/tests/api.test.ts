import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { identityControl } from "../src/types.js";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("api client", () => {
  it("posts the create payload and unwraps the response", async () => {
    const fetchFn = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      expect(String(url)).toBe("http://host:1/api/v1/sessions");
      expect(JSON.parse(String(init?.body))).toEqual({ model_id: "m", frame: "F" });
      return jsonResponse(200, { session_id: "s", mask: "M", width: 64, height: 64 });
    });
    const client = new ApiClient("http://host:1", fetchFn as typeof fetch);
    const resp = await client.createSession("m", "F");
    expect(resp.session_id).toBe("s");
  });

  it("sends the control record verbatim on step", async () => {
    const control = { ...identityControl("positional"), dx: 8 };
    const fetchFn = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      expect(String(url)).toBe("http://h/api/v1/sessions/s1/step");
      expect(JSON.parse(String(init?.body))).toEqual(control);
      return jsonResponse(200, { frame: "F1", mask: "M1", control_mask: "C1" });
    });
    const client = new ApiClient("http://h", fetchFn as typeof fetch);
    const resp = await client.step("s1", control);
    expect(resp.frame).toBe("F1");
  });

  it("maps error bodies onto ApiError", async () => {
    const fetchFn = vi.fn(async () =>
      jsonResponse(422, { code: "degenerate_affine", message: "|det| too small" }));
    const client = new ApiClient("http://h", fetchFn as typeof fetch);
    await expect(client.step("s1", identityControl())).rejects.toMatchObject({
      status: 422,
      code: "degenerate_affine",
    });
  });

  it("tolerates non-JSON error bodies", async () => {
    const fetchFn = vi.fn(async () => new Response("boom", { status: 500 }));
    const client = new ApiClient("http://h", fetchFn as typeof fetch);
    const err = await client.listModels().catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(500);
  });

  it("deletes sessions", async () => {
    const fetchFn = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      expect(init?.method).toBe("DELETE");
      expect(String(url)).toBe("http://h/api/v1/sessions/s9");
      return jsonResponse(200, { ok: true });
    });
    const client = new ApiClient("http://h", fetchFn as typeof fetch);
    await client.deleteSession("s9");
    expect(fetchFn).toHaveBeenCalledOnce();
  });
});
