// @vitest-environment happy-dom
import { beforeEach, describe, expect, it, vi } from "vitest";

import { Envelope, PROTOCOL_VERSION, decodeEnvelope, encodeEnvelope } from "../src/protocol.js";
import { Bootstrap, ClientSession, SocketLike } from "../src/session.js";
import { buildActionPad, buildRankingView, buildRewardButtons } from "../src/widgets.js";

const BOOT: Bootstrap = {
  session_id: "s1", token: "tok", study_id: "study", participant_id: "p1",
  ws_path: "/ws/s1",
};

class FakeSocket implements SocketLike {
  sent: Envelope[] = [];
  onopen: (() => void) | null = null;
  onmessage: ((data: string) => void) | null = null;
  onclose: (() => void) | null = null;
  send(data: string): void {
    this.sent.push(decodeEnvelope(data));
  }
  close(): void {}
  serverSays(kind: Envelope["kind"], payload: Record<string, unknown>, tick?: number): void {
    const env: Envelope = { v: PROTOCOL_VERSION, session: "s1", sender: "server",
                            kind, payload, sent_at: 0 };
    if (tick !== undefined) env.tick = tick;
    this.onmessage?.(encodeEnvelope(env));
  }
}

function liveSession(): { session: ClientSession; socket: FakeSocket } {
  let socket!: FakeSocket;
  const session = new ClientSession(BOOT, () => {
    socket = new FakeSocket();
    return socket;
  });
  session.connect("ws://t");
  socket.onopen?.();
  socket.serverSays("RoleAssign", {
    role: "pilot", controller_kind: "human", instance: 0,
    widgets: ["action_pad", "reward_buttons", "ranking_view"],
    study_id: "study", episodes: 2, action_arities: { pilot: 5 },
    channels: [], agent_roles: [],
  });
  return { session, socket };
}

beforeEach(() => {
  document.body.innerHTML = "<div id='root'></div>";
});

describe("action pad", () => {
  it("is button-per-action and keyboard operable", () => {
    const { session, socket } = liveSession();
    const root = document.getElementById("root")!;
    buildActionPad(root, session);
    const buttons = root.querySelectorAll("button");
    expect(buttons.length).toBe(5);

    socket.serverSays("ActRequest", { tick: 0, roles: ["pilot"], deadline_ms: 1 });
    (buttons[1] as HTMLButtonElement).click();
    expect(socket.sent.at(-1)!.kind).toBe("ActSubmit");
    expect(socket.sent.at(-1)!.payload.action).toBe(1);

    socket.serverSays("ActRequest", { tick: 1, roles: ["pilot"], deadline_ms: 1 });
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "ArrowDown" }));
    expect(socket.sent.at(-1)!.payload.action).toBe(2);
    expect(socket.sent.at(-1)!.tick).toBe(1);
  });
});

describe("reward buttons", () => {
  it("sends +1/-1 by click and keyboard", () => {
    const { session, socket } = liveSession();
    socket.serverSays("StepBroadcast", {
      observations: {}, rewards: {}, terminated: false, truncated: false, info: {},
    }, 4);
    const root = document.getElementById("root")!;
    buildRewardButtons(root, session);
    const [plus, minus] = Array.from(root.querySelectorAll("button"));
    (plus as HTMLButtonElement).click();
    expect(socket.sent.at(-1)!.payload.value).toBe(1);
    (minus as HTMLButtonElement).click();
    expect(socket.sent.at(-1)!.payload.value).toBe(-1);
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "+" }));
    expect(socket.sent.filter((e) => e.kind === "RewardAnnotation")).toHaveLength(3);
  });
});

describe("ranking view", () => {
  it("keeps submit disabled until every trajectory was watched", () => {
    vi.useFakeTimers();
    const { session, socket } = liveSession();
    const root = document.getElementById("root")!;
    const frames = [{ mode: "grid", width: 1, height: 1,
                      cells: [{ x: 0, y: 0, kind: "floor" }], sprites: [],
                      overlay_text: [] }];
    const refresh = buildRankingView(root, session, () => null);
    socket.serverSays("PrefQuery", {
      query_id: "q1",
      items: [
        { item_id: "a", returns: [3, -1], length: 1, frames },
        { item_id: "b", returns: [1, -1], length: 1, frames },
      ],
    });
    refresh();
    const submitBefore = root.querySelector(".submit-ranking") as HTMLButtonElement;
    expect(submitBefore.disabled).toBe(true);
    submitBefore.click();
    expect(socket.sent.filter((e) => e.kind === "PrefResponse")).toHaveLength(0);

    vi.advanceTimersByTime(1000); // playback finishes both one-frame cards
    const submitAfter = root.querySelector(".submit-ranking") as HTMLButtonElement;
    expect(submitAfter.disabled).toBe(false);
    submitAfter.click();
    const response = socket.sent.at(-1)!;
    expect(response.kind).toBe("PrefResponse");
    expect((response.payload.ranking as string[]).sort()).toEqual(["a", "b"]);
    vi.useRealTimers();
  });

  it("reorders with the arrow buttons before submitting", () => {
    vi.useFakeTimers();
    const { session, socket } = liveSession();
    const root = document.getElementById("root")!;
    const refresh = buildRankingView(root, session, () => null);
    socket.serverSays("PrefQuery", {
      query_id: "q2",
      items: [
        { item_id: "a", returns: [1, -1], length: 0, frames: [] },
        { item_id: "b", returns: [9, -5], length: 0, frames: [] },
      ],
    });
    refresh();
    vi.advanceTimersByTime(300);
    const moveUp = Array.from(root.querySelectorAll("li button"))
      .filter((b) => b.textContent === "▲")[1] as HTMLButtonElement;
    moveUp.click();
    const submit = root.querySelector(".submit-ranking") as HTMLButtonElement;
    submit.click();
    expect(socket.sent.at(-1)!.payload.ranking).toEqual(["b", "a"]);
    vi.useRealTimers();
  });
});
