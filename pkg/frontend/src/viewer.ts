// Trajectory playback for preference ranking: steps each item's frame stream
// client-side at a fixed rate. Submission stays disabled until the
// participant has watched every item at least once through.

import { PrefItem, RenderFrame } from "./protocol.js";

export class TrajectoryViewer {
  private cursors = new Map<string, number>();
  private watched = new Set<string>();

  constructor(readonly items: PrefItem[], readonly frameIntervalMs = 250) {
    for (const item of items) {
      this.cursors.set(item.item_id, 0);
    }
  }

  item(itemId: string): PrefItem {
    const found = this.items.find((it) => it.item_id === itemId);
    if (!found) {
      throw new Error(`no item ${itemId}`);
    }
    return found;
  }

  currentFrame(itemId: string): RenderFrame | null {
    const item = this.item(itemId);
    if (item.frames.length === 0) {
      return null;
    }
    const cursor = this.cursors.get(itemId) ?? 0;
    return item.frames[Math.min(cursor, item.frames.length - 1)];
  }

  /** Advance one playback step; returns the frame to draw, null at the end. */
  advance(itemId: string): RenderFrame | null {
    const item = this.item(itemId);
    const cursor = this.cursors.get(itemId) ?? 0;
    if (cursor >= item.frames.length) {
      this.watched.add(itemId);
      return null;
    }
    this.cursors.set(itemId, cursor + 1);
    if (cursor + 1 >= item.frames.length) {
      this.watched.add(itemId);
    }
    return item.frames[cursor];
  }

  restart(itemId: string): void {
    this.cursors.set(itemId, 0);
  }

  hasWatched(itemId: string): boolean {
    return this.watched.has(itemId) || this.item(itemId).frames.length === 0;
  }

  /** Ranking may be submitted only after every item has been viewed. */
  allWatched(): boolean {
    return this.items.every((it) => this.hasWatched(it.item_id));
  }
}
