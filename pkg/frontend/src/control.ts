// Pure gesture -> control mapping and mask-pixel operations.
// Pixel-space gestures are converted to the backend's control schema here;
// the server never sees raw gestures.

import { ControlRecord, identityControl } from "./types.js";

export interface Point {
  x: number;
  y: number;
}

/** Drag by (dx, dy) display pixels at a given zoom -> positional control. */
export function dragToControl(dxDisplay: number, dyDisplay: number, zoom: number): ControlRecord {
  const c = identityControl("positional");
  c.dx = dxDisplay / zoom;
  c.dy = dyDisplay / zoom;
  return c;
}

/** Corner-handle drag -> scale about the mask centroid (uniform with shift). */
export function handlesToScale(
  center: Point,
  start: Point,
  current: Point,
  uniform: boolean,
): ControlRecord {
  const c = identityControl("affine");
  const eps = 1e-6;
  const sx = Math.abs(current.x - center.x) / Math.max(Math.abs(start.x - center.x), eps);
  const sy = Math.abs(current.y - center.y) / Math.max(Math.abs(start.y - center.y), eps);
  if (uniform) {
    const s = Math.max((sx + sy) / 2, 0.05);
    c.sx = s;
    c.sy = s;
  } else {
    c.sx = Math.max(sx, 0.05);
    c.sy = Math.max(sy, 0.05);
  }
  return c;
}

/** Rotation-handle drag -> rotation angle about the centroid, radians. */
export function rotationFromHandle(center: Point, start: Point, current: Point): ControlRecord {
  const a0 = Math.atan2(start.y - center.y, start.x - center.x);
  const a1 = Math.atan2(current.y - center.y, current.x - center.x);
  const c = identityControl("affine");
  c.rot = a1 - a0;
  return c;
}

/** Fold a second gesture into an existing pending affine control. */
export function mergeControls(base: ControlRecord, update: Partial<ControlRecord>): ControlRecord {
  const merged = { ...base, ...update };
  if (update.rot !== undefined || update.sx !== undefined || update.sy !== undefined ||
      update.shear !== undefined) {
    merged.mode = "affine";
  }
  return merged;
}

// --- binary mask buffers (1 byte per pixel, 0 or 1) --------------------------

export function emptyMask(width: number, height: number): Uint8Array {
  return new Uint8Array(width * height);
}

export function paintDisk(
  mask: Uint8Array,
  width: number,
  height: number,
  cx: number,
  cy: number,
  radius: number,
  value: 0 | 1,
): void {
  const r2 = radius * radius;
  const y0 = Math.max(0, Math.floor(cy - radius));
  const y1 = Math.min(height - 1, Math.ceil(cy + radius));
  const x0 = Math.max(0, Math.floor(cx - radius));
  const x1 = Math.min(width - 1, Math.ceil(cx + radius));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x - cx;
      const dy = y - cy;
      if (dx * dx + dy * dy <= r2) {
        mask[y * width + x] = value;
      }
    }
  }
}

/** Union of two mask layers (multi-agent composition before submission). */
export function unionMasks(a: Uint8Array, b: Uint8Array): Uint8Array {
  if (a.length !== b.length) {
    throw new Error(`mask sizes differ: ${a.length} vs ${b.length}`);
  }
  const out = new Uint8Array(a.length);
  for (let i = 0; i < a.length; i++) {
    out[i] = a[i] | b[i];
  }
  return out;
}

export function maskArea(mask: Uint8Array): number {
  let n = 0;
  for (let i = 0; i < mask.length; i++) {
    n += mask[i];
  }
  return n;
}

export function maskCentroid(mask: Uint8Array, width: number): Point {
  let sx = 0;
  let sy = 0;
  let n = 0;
  for (let i = 0; i < mask.length; i++) {
    if (mask[i]) {
      sx += i % width;
      sy += Math.floor(i / width);
      n += 1;
    }
  }
  if (n === 0) {
    return { x: width / 2, y: mask.length / width / 2 };
  }
  return { x: sx / n, y: sy / n };
}

export function maskBounds(mask: Uint8Array, width: number): { x0: number; y0: number; x1: number; y1: number } | null {
  let x0 = Infinity;
  let y0 = Infinity;
  let x1 = -Infinity;
  let y1 = -Infinity;
  for (let i = 0; i < mask.length; i++) {
    if (mask[i]) {
      const x = i % width;
      const y = Math.floor(i / width);
      x0 = Math.min(x0, x);
      y0 = Math.min(y0, y);
      x1 = Math.max(x1, x);
      y1 = Math.max(y1, y);
    }
  }
  return x1 < x0 ? null : { x0, y0, x1, y1 };
}

/**
 * Corners of a bounding box under a pending affine control (about the box
 * center), for the outline preview. Every pending control must be renderable
 * this way before submission.
 */
export function previewCorners(
  bounds: { x0: number; y0: number; x1: number; y1: number },
  control: ControlRecord,
): Point[] {
  const cx = (bounds.x0 + bounds.x1) / 2;
  const cy = (bounds.y0 + bounds.y1) / 2;
  const cos = Math.cos(control.rot);
  const sin = Math.sin(control.rot);
  const pts: Point[] = [
    { x: bounds.x0, y: bounds.y0 },
    { x: bounds.x1, y: bounds.y0 },
    { x: bounds.x1, y: bounds.y1 },
    { x: bounds.x0, y: bounds.y1 },
  ];
  return pts.map((p) => {
    // scale, shear, rotate about the center, then translate
    let x = (p.x - cx) * control.sx;
    let y = (p.y - cy) * control.sy;
    x = x + control.shear * y;
    const xr = cos * x - sin * y;
    const yr = sin * x + cos * y;
    return { x: xr + cx + control.dx, y: yr + cy + control.dy };
  });
}
