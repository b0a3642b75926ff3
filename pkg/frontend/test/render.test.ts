import { describe, expect, it } from "vitest";

import { RenderFrame } from "../src/protocol.js";
import { Ctx2D, renderFrame } from "../src/render.js";

class RecordingCtx implements Ctx2D {
  fillStyle = "";
  strokeStyle = "";
  lineWidth = 0;
  font = "";
  ops: string[] = [];
  rects: Array<[number, number, number, number]> = [];
  texts: string[] = [];

  clearRect(): void {
    this.ops.push("clear");
  }
  fillRect(x: number, y: number, w: number, h: number): void {
    this.ops.push("fillRect");
    this.rects.push([x, y, w, h]);
  }
  beginPath(): void {
    this.ops.push("beginPath");
  }
  moveTo(): void {}
  lineTo(): void {}
  stroke(): void {
    this.ops.push("stroke");
  }
  arcs: Array<[number, number]> = [];
  arc(x: number, y: number): void {
    this.ops.push("arc");
    this.arcs.push([x, y]);
  }
  fill(): void {
    this.ops.push("fill");
  }
  fillText(text: string): void {
    this.texts.push(text);
  }
}

function mazeFrame(): RenderFrame {
  const cells = [];
  for (let y = 0; y < 5; y += 1) {
    for (let x = 0; x < 5; x += 1) {
      cells.push({ x, y, kind: "floor", walls: x === 0 ? "W" : "" });
    }
  }
  return {
    mode: "grid",
    width: 5,
    height: 5,
    cells,
    sprites: [
      { x: 4, y: 4, kind: "goal" },
      { x: 0, y: 0, kind: "agent" },
    ],
    overlay_text: [],
  };
}

describe("renderFrame", () => {
  it("draws every cell and exactly one agent sprite for a 5x5 maze", () => {
    const ctx = new RecordingCtx();
    const stats = renderFrame(mazeFrame(), ctx, 10);
    expect(stats.cells).toBe(25);
    expect(stats.sprites).toBe(2);
    expect(ctx.ops.filter((op) => op === "arc")).toHaveLength(1); // the agent
  });

  it("moves the agent drawing with its coordinate", () => {
    const frame = mazeFrame();
    const ctx1 = new RecordingCtx();
    renderFrame(frame, ctx1, 10);
    const moved: RenderFrame = {
      ...frame,
      sprites: [frame.sprites[0], { x: 1, y: 0, kind: "agent" }],
    };
    const ctx2 = new RecordingCtx();
    renderFrame(moved, ctx2, 10);
    expect(ctx1.ops).toEqual(ctx2.ops);
    expect(ctx2.arcs[0][0] - ctx1.arcs[0][0]).toBe(10); // one cell to the east
    expect(ctx2.arcs[0][1]).toBe(ctx1.arcs[0][1]);
  });

  it("renders gauges as position and velocity bars with overlay text", () => {
    const frame: RenderFrame = {
      mode: "scalar_gauge",
      width: 101,
      height: 2,
      cells: [],
      sprites: [
        { x: 30, y: 0, kind: "gauge_position" },
        { x: 50, y: 1, kind: "gauge_velocity" },
      ],
      overlay_text: ["position=-0.5", "velocity=0.0"],
    };
    const ctx = new RecordingCtx();
    const stats = renderFrame(frame, ctx, 10);
    expect(stats.gauges).toBe(2);
    expect(ctx.texts).toEqual(["position=-0.5", "velocity=0.0"]);
  });

  it("throws on malformed frames instead of drawing garbage", () => {
    const ctx = new RecordingCtx();
    expect(() => renderFrame({ mode: "grid", width: 0, height: 3, cells: [],
                               sprites: [], overlay_text: [] }, ctx))
      .toThrowError(/malformed/);
    expect(() => renderFrame({
      mode: "grid", width: 3, height: 3,
      cells: [{ x: 9, y: 0, kind: "floor" }], sprites: [], overlay_text: [],
    }, ctx)).toThrowError(/out of bounds/);
  });
});
