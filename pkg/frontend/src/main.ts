// Wires DOM events -> gestures -> pending control -> API -> view updates.

import { ApiClient } from "./api.js";
import {
  fileToFramePng,
  loadImage,
  maskToPng,
  pngToMask,
  renderThumb,
  renderView,
} from "./canvas.js";
import {
  dragToControl,
  handlesToScale,
  maskBounds,
  maskCentroid,
  mergeControls,
  paintDisk,
  previewCorners,
  rotationFromHandle,
  unionMasks,
} from "./control.js";
import {
  SessionView,
  beginSubmit,
  initialView,
  onConnected,
  onStepError,
  onStepSuccess,
  setPending,
  toggleMultiAgent,
} from "./state.js";
import { identityControl } from "./types.js";

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

let view: SessionView = initialView();
let api: ApiClient | null = null;
let serverMask: Uint8Array | null = null;   // decoded current mask
let maskSize = { width: 0, height: 0 };
let secondAgent: Uint8Array | null = null;  // multi-agent second layer

type Tool = "move" | "scale" | "rotate" | "brush" | "erase";
let tool: Tool = "move";
let dragStart: { x: number; y: number } | null = null;

const ZOOM = 6;

function imageCoords(ev: MouseEvent, canvas: HTMLCanvasElement) {
  const rect = canvas.getBoundingClientRect();
  return { x: (ev.clientX - rect.left) / ZOOM, y: (ev.clientY - rect.top) / ZOOM };
}

async function redraw(): Promise<void> {
  if (!view.frame || !view.mask) return;
  const canvas = $<HTMLCanvasElement>("view");
  const opacity = Number(($<HTMLInputElement>("opacity")).value) / 100;
  let outline = null;
  if (serverMask && view.pending.mode !== "nonparam") {
    const bounds = maskBounds(serverMask, maskSize.width);
    if (bounds) outline = previewCorners(bounds, view.pending);
  }
  await renderView(canvas, view.frame, view.mask, {
    zoom: ZOOM,
    overlayOpacity: opacity,
    outline,
    brush: view.brushMask,
  });
  $<HTMLSpanElement>("pending").textContent = view.pending.mode === "nonparam"
    ? "nonparam (brush edit)"
    : `dx=${view.pending.dx.toFixed(1)} dy=${view.pending.dy.toFixed(1)} ` +
      `rot=${(view.pending.rot * 180 / Math.PI).toFixed(1)}deg ` +
      `sx=${view.pending.sx.toFixed(2)} sy=${view.pending.sy.toFixed(2)}`;
  $<HTMLSpanElement>("status").textContent =
    view.error ?? view.warning ?? (view.inFlight ? "stepping..." : "ready");
  ($<HTMLButtonElement>("step")).disabled = view.inFlight || view.connection !== "connected";

  const strip = $<HTMLDivElement>("history");
  strip.innerHTML = "";
  for (const entry of view.history.slice(-12)) {
    const thumb = document.createElement("canvas");
    thumb.className = "thumb";
    strip.appendChild(thumb);
    await renderThumb(thumb, entry.frame, 64);
  }
}

async function refreshMaskBuffer(): Promise<void> {
  if (!view.mask) return;
  const decoded = await pngToMask(view.mask);
  serverMask = decoded.mask;
  maskSize = { width: decoded.width, height: decoded.height };
}

async function connect(): Promise<void> {
  const base = ($<HTMLInputElement>("server")).value;
  api = new ApiClient(base);
  try {
    const models = await api.listModels();
    if (!models.length) throw new Error("server has no models");
    const model = models[0];
    const file = ($<HTMLInputElement>("file")).files?.[0];
    if (!file) throw new Error("choose a start image first");
    const img = await loadImage(
      (await fileToBase64(file)).replace(/^data:image\/\w+;base64,/, ""));
    const [h, w] = model.resolution ?? [img.height, img.width];
    const frameB64 = fileToFramePng(img, w, h);
    const resp = await api.createSession(model.model_id, frameB64);
    view = onConnected(view, frameB64, resp);
    await refreshMaskBuffer();
    $<HTMLSpanElement>("status").textContent = `connected to ${model.model_id}`;
  } catch (err) {
    view = onStepError(view, err);
  }
  await redraw();
}

function fileToBase64(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => resolve(String(reader.result));
    reader.onerror = () => reject(reader.error);
    reader.readAsDataURL(file);
  });
}

async function submit(): Promise<void> {
  const sessionId = view.sessionId;
  if (!api || !sessionId) return;
  const started = beginSubmit(view);
  if (!started) return;                 // one in-flight step per session
  view = started;
  await redraw();
  try {
    let control = view.pending;
    if (view.brushMask) {
      let mask = view.brushMask;
      if (view.multiAgent && secondAgent) {
        mask = unionMasks(mask, secondAgent);
      }
      control = { ...identityControl("nonparam"), mode: "nonparam",
                  mask: maskToPng(mask, maskSize.width, maskSize.height) };
    }
    const resp = await api.step(sessionId, control);
    view = onStepSuccess(view, resp);
    await refreshMaskBuffer();
  } catch (err) {
    view = onStepError(view, err);      // view state (frame/mask) unchanged
  }
  await redraw();
}

function bindCanvas(): void {
  const canvas = $<HTMLCanvasElement>("view");
  canvas.addEventListener("mousedown", (ev) => {
    dragStart = imageCoords(ev, canvas);
    if ((tool === "brush" || tool === "erase") && serverMask) {
      if (!view.brushMask) view = { ...view, brushMask: serverMask.slice() };
      paintBrush(ev, canvas);
    }
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (!dragStart || !serverMask) return;
    const cur = imageCoords(ev, canvas);
    if (tool === "move") {
      const ctl = dragToControl((cur.x - dragStart.x) * ZOOM, (cur.y - dragStart.y) * ZOOM, ZOOM);
      view = setPending(view, mergeControls(view.pending, { dx: ctl.dx, dy: ctl.dy }));
    } else if (tool === "scale") {
      const center = maskCentroid(serverMask, maskSize.width);
      const ctl = handlesToScale(center, dragStart, cur, ev.shiftKey);
      view = setPending(view, mergeControls(view.pending, { sx: ctl.sx, sy: ctl.sy }));
    } else if (tool === "rotate") {
      const center = maskCentroid(serverMask, maskSize.width);
      const ctl = rotationFromHandle(center, dragStart, cur);
      view = setPending(view, mergeControls(view.pending, { rot: ctl.rot }));
    } else {
      paintBrush(ev, canvas);
    }
    void redraw();
  });
  window.addEventListener("mouseup", () => { dragStart = null; });
}

function paintBrush(ev: MouseEvent, canvas: HTMLCanvasElement): void {
  if (!view.brushMask) return;
  const p = imageCoords(ev, canvas);
  const radius = Number(($<HTMLInputElement>("brushsize")).value);
  paintDisk(view.brushMask, maskSize.width, maskSize.height, p.x, p.y, radius,
            tool === "erase" ? 0 : 1);
}

function bindControls(): void {
  $<HTMLButtonElement>("connect").addEventListener("click", () => void connect());
  $<HTMLButtonElement>("step").addEventListener("click", () => void submit());
  $<HTMLInputElement>("opacity").addEventListener("input", () => void redraw());
  for (const t of ["move", "scale", "rotate", "brush", "erase"] as Tool[]) {
    $<HTMLButtonElement>(`tool-${t}`).addEventListener("click", () => {
      tool = t;
      document.querySelectorAll(".tool").forEach((b) => b.classList.remove("active"));
      $<HTMLButtonElement>(`tool-${t}`).classList.add("active");
    });
  }
  $<HTMLButtonElement>("reset-pending").addEventListener("click", () => {
    view = { ...view, pending: identityControl(), brushMask: null };
    void redraw();
  });
  $<HTMLInputElement>("multiagent").addEventListener("change", (ev) => {
    const on = (ev.target as HTMLInputElement).checked;
    view = toggleMultiAgent(view, on);
    secondAgent = on && serverMask ? serverMask.slice() : null;
    void redraw();
  });
}

window.addEventListener("DOMContentLoaded", () => {
  bindControls();
  bindCanvas();
});
