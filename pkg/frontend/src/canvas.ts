// Canvas rendering and PNG <-> mask-buffer conversion (DOM side).

import { Point } from "./control.js";

export function loadImage(b64Png: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error("could not decode image"));
    img.src = `data:image/png;base64,${b64Png}`;
  });
}

/** Decode a grayscale PNG into a binary buffer (>=128 means foreground). */
export async function pngToMask(b64Png: string): Promise<{ mask: Uint8Array; width: number; height: number }> {
  const img = await loadImage(b64Png);
  const canvas = document.createElement("canvas");
  canvas.width = img.width;
  canvas.height = img.height;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(img, 0, 0);
  const data = ctx.getImageData(0, 0, img.width, img.height).data;
  const mask = new Uint8Array(img.width * img.height);
  for (let i = 0; i < mask.length; i++) {
    mask[i] = data[i * 4] >= 128 ? 1 : 0;
  }
  return { mask, width: img.width, height: img.height };
}

/** Encode a binary buffer as a grayscale base64 PNG (0 / 255). */
export function maskToPng(mask: Uint8Array, width: number, height: number): string {
  const canvas = document.createElement("canvas");
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d")!;
  const img = ctx.createImageData(width, height);
  for (let i = 0; i < mask.length; i++) {
    const v = mask[i] ? 255 : 0;
    img.data[i * 4] = v;
    img.data[i * 4 + 1] = v;
    img.data[i * 4 + 2] = v;
    img.data[i * 4 + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
  return canvas.toDataURL("image/png").split(",")[1];
}

/** Scale an arbitrary user image onto the model resolution and return base64 PNG. */
export function fileToFramePng(img: HTMLImageElement, width: number, height: number): string {
  const canvas = document.createElement("canvas");
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(img, 0, 0, width, height);
  return canvas.toDataURL("image/png").split(",")[1];
}

export interface RenderOptions {
  zoom: number;
  overlayOpacity: number;     // mask tint strength, 0..1
  outline: Point[] | null;    // pending-control preview polygon (image coords)
  brush: Uint8Array | null;   // brush buffer rendered instead of the server mask
}

export async function renderView(
  canvas: HTMLCanvasElement,
  frameB64: string,
  maskB64: string,
  opts: RenderOptions,
): Promise<void> {
  const frame = await loadImage(frameB64);
  const { mask, width, height } = await pngToMask(maskB64);
  canvas.width = width * opts.zoom;
  canvas.height = height * opts.zoom;
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;   // nearest-neighbor display scaling
  ctx.drawImage(frame, 0, 0, canvas.width, canvas.height);

  const shown = opts.brush ?? mask;
  if (opts.overlayOpacity > 0) {
    const overlay = document.createElement("canvas");
    overlay.width = width;
    overlay.height = height;
    const octx = overlay.getContext("2d")!;
    const img = octx.createImageData(width, height);
    for (let i = 0; i < shown.length; i++) {
      if (shown[i]) {
        img.data[i * 4] = 255;
        img.data[i * 4 + 3] = Math.round(255 * opts.overlayOpacity);
      }
    }
    octx.putImageData(img, 0, 0);
    ctx.drawImage(overlay, 0, 0, canvas.width, canvas.height);
  }

  if (opts.outline && opts.outline.length >= 3) {
    ctx.strokeStyle = "#3fa7ff";
    ctx.lineWidth = 2;
    ctx.beginPath();
    opts.outline.forEach((p, i) => {
      const x = p.x * opts.zoom;
      const y = p.y * opts.zoom;
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.closePath();
    ctx.stroke();
  }
}

export async function renderThumb(canvas: HTMLCanvasElement, frameB64: string,
                                  size: number): Promise<void> {
  const frame = await loadImage(frameB64);
  canvas.width = size;
  canvas.height = size;
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(frame, 0, 0, size, size);
}
