import { describe, expect, it } from "vitest";

import { PrefItem, RenderFrame } from "../src/protocol.js";
import { TrajectoryViewer } from "../src/viewer.js";

function frame(step: number): RenderFrame {
  return { mode: "grid", width: 2, height: 2,
           cells: [{ x: step % 2, y: 0, kind: "floor" }], sprites: [],
           overlay_text: [] };
}

function item(id: string, frames: number): PrefItem {
  return { item_id: id, returns: [1, -1], length: frames,
           frames: Array.from({ length: frames }, (_, i) => frame(i)) };
}

describe("TrajectoryViewer", () => {
  it("plays frames in order and flags items as watched at the end", () => {
    const viewer = new TrajectoryViewer([item("a", 3), item("b", 2)]);
    expect(viewer.allWatched()).toBe(false);
    expect(viewer.advance("a")).toEqual(frame(0));
    expect(viewer.advance("a")).toEqual(frame(1));
    expect(viewer.hasWatched("a")).toBe(false);
    expect(viewer.advance("a")).toEqual(frame(2));
    expect(viewer.hasWatched("a")).toBe(true);
    expect(viewer.allWatched()).toBe(false);
    viewer.advance("b");
    viewer.advance("b");
    expect(viewer.allWatched()).toBe(true);
  });

  it("replays match the served frames exactly", () => {
    const source = item("a", 4);
    const viewer = new TrajectoryViewer([source]);
    const played: RenderFrame[] = [];
    for (let f = viewer.advance("a"); f !== null; f = viewer.advance("a")) {
      played.push(f);
    }
    expect(played).toEqual(source.frames);
  });

  it("restart rewinds playback without clearing the watched flag", () => {
    const viewer = new TrajectoryViewer([item("a", 2)]);
    viewer.advance("a");
    viewer.advance("a");
    expect(viewer.hasWatched("a")).toBe(true);
    viewer.restart("a");
    expect(viewer.currentFrame("a")).toEqual(frame(0));
    expect(viewer.hasWatched("a")).toBe(true);
  });

  it("treats frameless items as watched and rejects unknown ids", () => {
    const viewer = new TrajectoryViewer([item("a", 0)]);
    expect(viewer.allWatched()).toBe(true);
    expect(() => viewer.item("ghost")).toThrowError(/no item/);
  });
});
