// Client-side rasterization of structured render frames onto a 2D canvas.

import { FrameSprite, RenderFrame } from "./protocol.js";

// The subset of CanvasRenderingContext2D the renderer touches; tests inject a
// recording fake.
export interface Ctx2D {
  fillStyle: string;
  strokeStyle: string;
  lineWidth: number;
  font: string;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
}

const CELL_COLORS: Record<string, string> = {
  floor: "#f8f8f4",
  water: "#bcd8ee",
  rock: "#6b5640",
};

const SPRITE_COLORS: Record<string, string> = {
  agent: "#d4372c",
  goal: "#2c9e4b",
  treasure: "#d9a520",
  landmark: "#7a5fd0",
  landmark_covered: "#2c9e4b",
};

export interface DrawStats {
  cells: number;
  sprites: number;
  gauges: number;
  texts: number;
}

export function renderFrame(frame: RenderFrame, ctx: Ctx2D, cellPx = 24): DrawStats {
  if (!frame || typeof frame.width !== "number" || typeof frame.height !== "number"
      || frame.width < 1 || frame.height < 1) {
    throw new Error("malformed frame: bad dimensions");
  }
  const stats: DrawStats = { cells: 0, sprites: 0, gauges: 0, texts: 0 };
  const w = frame.width * cellPx;
  const h = frame.height * cellPx;
  ctx.clearRect(0, 0, w, h + 48);

  if (frame.mode === "scalar_gauge") {
    renderGauges(frame, ctx, cellPx, stats);
  } else {
    for (const cell of frame.cells ?? []) {
      if (cell.x < 0 || cell.y < 0 || cell.x >= frame.width || cell.y >= frame.height) {
        throw new Error(`malformed frame: cell (${cell.x},${cell.y}) out of bounds`);
      }
      ctx.fillStyle = CELL_COLORS[cell.kind] ?? "#e0e0e0";
      ctx.fillRect(cell.x * cellPx, cell.y * cellPx, cellPx, cellPx);
      stats.cells += 1;
      if (cell.walls) {
        drawWalls(ctx, cell.x, cell.y, cell.walls, cellPx);
      }
    }
    for (const sprite of frame.sprites ?? []) {
      if (sprite.x < 0 || sprite.y < 0 || sprite.x >= frame.width || sprite.y >= frame.height) {
        throw new Error(`malformed frame: sprite (${sprite.x},${sprite.y}) out of bounds`);
      }
      drawSprite(ctx, sprite, cellPx);
      stats.sprites += 1;
    }
  }

  let line = 0;
  for (const text of frame.overlay_text ?? []) {
    ctx.fillStyle = "#222";
    ctx.font = "12px monospace";
    ctx.fillText(text, 4, h + 14 + line * 14);
    stats.texts += 1;
    line += 1;
  }
  return stats;
}

function drawWalls(ctx: Ctx2D, x: number, y: number, walls: string, cellPx: number): void {
  ctx.strokeStyle = "#1c1c1c";
  ctx.lineWidth = 2;
  const px = x * cellPx;
  const py = y * cellPx;
  ctx.beginPath();
  if (walls.includes("N")) {
    ctx.moveTo(px, py);
    ctx.lineTo(px + cellPx, py);
  }
  if (walls.includes("E")) {
    ctx.moveTo(px + cellPx, py);
    ctx.lineTo(px + cellPx, py + cellPx);
  }
  if (walls.includes("S")) {
    ctx.moveTo(px, py + cellPx);
    ctx.lineTo(px + cellPx, py + cellPx);
  }
  if (walls.includes("W")) {
    ctx.moveTo(px, py);
    ctx.lineTo(px, py + cellPx);
  }
  ctx.stroke();
}

function drawSprite(ctx: Ctx2D, sprite: FrameSprite, cellPx: number): void {
  const cx = sprite.x * cellPx + cellPx / 2;
  const cy = sprite.y * cellPx + cellPx / 2;
  ctx.fillStyle = SPRITE_COLORS[sprite.kind] ?? "#3a6ea5";
  if (sprite.kind === "goal" || sprite.kind.startsWith("landmark")) {
    ctx.fillRect(sprite.x * cellPx + 4, sprite.y * cellPx + 4, cellPx - 8, cellPx - 8);
  } else {
    ctx.beginPath();
    ctx.arc(cx, cy, cellPx / 2 - 4, 0, Math.PI * 2);
    ctx.fill();
  }
  if (sprite.label) {
    ctx.fillStyle = "#111";
    ctx.font = "10px monospace";
    ctx.fillText(sprite.label, cx - 4, cy + 3);
  }
}

function renderGauges(frame: RenderFrame, ctx: Ctx2D, cellPx: number,
                      stats: DrawStats): void {
  const trackWidth = frame.width * cellPx;
  for (const sprite of frame.sprites ?? []) {
    const y = sprite.y * (cellPx + 8) + 8;
    ctx.fillStyle = "#ddd";
    ctx.fillRect(0, y, trackWidth, cellPx / 2);
    ctx.fillStyle = SPRITE_COLORS[sprite.kind] ?? "#3a6ea5";
    const frac = frame.width > 1 ? sprite.x / (frame.width - 1) : 0;
    ctx.fillRect(frac * (trackWidth - 6), y - 2, 6, cellPx / 2 + 4);
    stats.gauges += 1;
  }
}
