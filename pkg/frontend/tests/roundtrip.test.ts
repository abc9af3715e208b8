// UI round-trip acceptance: connect -> drag (+8,0) -> submit. The displayed
// frame must be byte-for-byte what the service returned, and error responses
// must leave the view unchanged.

import { describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { dragToControl } from "../src/control.js";
import {
  beginSubmit,
  initialView,
  onConnected,
  onStepError,
  onStepSuccess,
  setPending,
} from "../src/state.js";

const FRAME0 = "aGVsbG8tZnJhbWUtMA==";
const MASK0 = "bWFzay0w";
const FRAME1 = "aGVsbG8tZnJhbWUtMQ==";
const MASK1 = "bWFzay0x";

function mockServer() {
  const seen: { url: string; body?: unknown }[] = [];
  const fetchFn = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
    const u = String(url);
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    seen.push({ url: u, body });
    if (u.endsWith("/api/v1/sessions")) {
      return new Response(JSON.stringify(
        { session_id: "sess", mask: MASK0, width: 64, height: 64 }), { status: 200 });
    }
    if (u.endsWith("/sessions/sess/step")) {
      if (body.sx === 0) {
        return new Response(JSON.stringify(
          { code: "degenerate_affine", message: "|det| too small" }), { status: 422 });
      }
      return new Response(JSON.stringify(
        { frame: FRAME1, mask: MASK1, control_mask: MASK1 }), { status: 200 });
    }
    return new Response(JSON.stringify({ code: "unknown", message: "?" }), { status: 404 });
  });
  return { fetchFn, seen };
}

describe("UI round trip", () => {
  it("drag (+8,0) submits dx=8 and displays the returned frame verbatim", async () => {
    const { fetchFn, seen } = mockServer();
    const api = new ApiClient("http://server", fetchFn as typeof fetch);

    // connect
    const created = await api.createSession("toy", FRAME0);
    let view = onConnected(initialView(), FRAME0, created);
    expect(view.frame).toBe(FRAME0);       // displayed == submitted start frame
    expect(view.mask).toBe(MASK0);         // displayed mask == served mask

    // drag 8 px right -> pending shows dx=8 before submission
    view = setPending(view, dragToControl(8, 0, 1));
    expect(view.pending.dx).toBe(8);
    expect(view.pending.dy).toBe(0);

    // submit
    view = beginSubmit(view)!;
    const resp = await api.step(view.sessionId!, view.pending);
    view = onStepSuccess(view, resp);

    // the wire payload carried the gesture, and the view shows the exact bytes
    const stepCall = seen.find((s) => s.url.endsWith("/step"))!;
    expect(stepCall.body).toMatchObject({ mode: "positional", dx: 8, dy: 0 });
    expect(view.frame).toBe(FRAME1);       // byte-for-byte (same base64 string)
    expect(view.mask).toBe(MASK1);
    expect(view.history).toEqual([{ frame: FRAME0, mask: MASK0 }]);
  });

  it("a 422 error leaves the displayed state untouched", async () => {
    const { fetchFn } = mockServer();
    const api = new ApiClient("http://server", fetchFn as typeof fetch);
    const created = await api.createSession("toy", FRAME0);
    let view = onConnected(initialView(), FRAME0, created);

    view = setPending(view, { mode: "affine", dx: 0, dy: 0, rot: 0, sx: 0, sy: 1, shear: 0 });
    view = beginSubmit(view)!;
    const before = { frame: view.frame, mask: view.mask, history: [...view.history] };
    try {
      await api.step(view.sessionId!, view.pending);
      throw new Error("expected a 422");
    } catch (err) {
      view = onStepError(view, err);
    }
    expect(view.frame).toBe(before.frame);
    expect(view.mask).toBe(before.mask);
    expect(view.history).toEqual(before.history);
    expect(view.error).toContain("degenerate_affine");
    expect(view.inFlight).toBe(false);
  });
});
