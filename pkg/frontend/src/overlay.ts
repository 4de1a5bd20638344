/** Bounding-box overlays drawn on a canvas above each image. */

import type { BoxBlock } from "./api.js";

export const BOX_COLOR_A = "#d62728";
export const BOX_COLOR_B = "#1f77b4";

export interface PixelRect {
  x: number;
  y: number;
  width: number;
  height: number;
}

/** Normalized corners scaled to the displayed image size, so the overlay is
 * resolution independent. */
export function scaleBox(box: BoxBlock, displayWidth: number, displayHeight: number): PixelRect {
  return {
    x: box.xmin * displayWidth,
    y: box.ymin * displayHeight,
    width: (box.xmax - box.xmin) * displayWidth,
    height: (box.ymax - box.ymin) * displayHeight,
  };
}

export interface OverlayEntry {
  box: BoxBlock;
  color: string;
  label: string;
}

export function drawOverlay(
  canvas: HTMLCanvasElement,
  image: HTMLImageElement,
  entries: readonly OverlayEntry[],
): void {
  const width = image.clientWidth;
  const height = image.clientHeight;
  if (!width || !height) return;
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, width, height);
  ctx.font = "bold 14px sans-serif";
  ctx.textBaseline = "top";
  for (const entry of entries) {
    const rect = scaleBox(entry.box, width, height);
    ctx.strokeStyle = entry.color;
    ctx.lineWidth = 2;
    ctx.strokeRect(rect.x, rect.y, rect.width, rect.height);
    ctx.fillStyle = entry.color;
    ctx.fillRect(rect.x, rect.y, 18, 18);
    ctx.fillStyle = "#ffffff";
    ctx.fillText(entry.label, rect.x + 5, rect.y + 3);
  }
}
