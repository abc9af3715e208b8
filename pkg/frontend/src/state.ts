// Session view state and its transitions, kept pure for testability.
// The view never fabricates pixels: frame/mask strings are stored exactly as
// the server returned them (single source of truth).

import { ApiError } from "./api.js";
import {
  ControlRecord,
  CreateSessionResponse,
  StepResponse,
  identityControl,
} from "./types.js";

export interface HistoryEntry {
  frame: string;
  mask: string;
}

export interface AgentLayer {
  mask: Uint8Array;          // binary, image resolution
  pending: ControlRecord;
}

export interface SessionView {
  connection: "disconnected" | "connected";
  sessionId: string | null;
  width: number;
  height: number;
  frame: string | null;      // base64 PNG, verbatim from the server
  mask: string | null;       // base64 PNG, verbatim from the server
  pending: ControlRecord;
  brushMask: Uint8Array | null;   // nonparam edit buffer, null unless brushing
  multiAgent: boolean;
  agents: AgentLayer[];
  history: HistoryEntry[];
  inFlight: boolean;
  error: string | null;
  warning: string | null;
}

export function initialView(): SessionView {
  return {
    connection: "disconnected",
    sessionId: null,
    width: 0,
    height: 0,
    frame: null,
    mask: null,
    pending: identityControl(),
    brushMask: null,
    multiAgent: false,
    agents: [],
    history: [],
    inFlight: false,
    error: null,
    warning: null,
  };
}

export function onConnected(
  view: SessionView,
  initFrameB64: string,
  resp: CreateSessionResponse,
): SessionView {
  return {
    ...initialView(),
    connection: "connected",
    sessionId: resp.session_id,
    width: resp.width,
    height: resp.height,
    frame: initFrameB64,
    mask: resp.mask,
  };
}

export function setPending(view: SessionView, control: ControlRecord): SessionView {
  return { ...view, pending: control, error: null };
}

/** Returns null when a request is already in flight (submission disabled). */
export function beginSubmit(view: SessionView): SessionView | null {
  if (view.inFlight || view.connection !== "connected") {
    return null;
  }
  return { ...view, inFlight: true, error: null, warning: null };
}

export function onStepSuccess(view: SessionView, resp: StepResponse): SessionView {
  const history = view.frame && view.mask
    ? [...view.history, { frame: view.frame, mask: view.mask }]
    : view.history;
  return {
    ...view,
    frame: resp.frame,
    mask: resp.mask,
    history,
    pending: identityControl(view.pending.mode === "nonparam" ? "positional" : view.pending.mode),
    brushMask: null,
    inFlight: false,
    warning: resp.warning ?? null,
  };
}

/** Errors leave frame, mask and history untouched; only the banner changes. */
export function onStepError(view: SessionView, err: unknown): SessionView {
  const message = err instanceof ApiError
    ? `${err.code}: ${err.message}`
    : String(err);
  return { ...view, inFlight: false, error: message };
}

export function toggleMultiAgent(view: SessionView, on: boolean): SessionView {
  return { ...view, multiAgent: on, agents: on ? view.agents : [] };
}

export function onDisconnected(view: SessionView): SessionView {
  return { ...initialView() };
}
