// DOM widgets. Everything is a plain button or focusable element so the whole
// interface stays keyboard-operable.

import { ClientSession, ViewState } from "./session.js";
import { TrajectoryViewer } from "./viewer.js";
import { Ctx2D, renderFrame } from "./render.js";

const ACTION_KEYS: Record<string, number> = {
  ArrowUp: 0,
  ArrowRight: 1,
  ArrowDown: 2,
  ArrowLeft: 3,
  " ": 4,
};

function button(label: string, title: string, onClick: () => void): HTMLButtonElement {
  const el = document.createElement("button");
  el.textContent = label;
  el.title = title;
  el.addEventListener("click", onClick);
  return el;
}

export function buildActionPad(root: HTMLElement, session: ClientSession): void {
  const pad = document.createElement("div");
  pad.className = "widget action-pad";
  pad.setAttribute("role", "group");
  pad.setAttribute("aria-label", "actions");
  const arity = session.view.role !== null
    ? Math.max(...Object.values(session.view.actionArities), 0)
    : 0;
  const labels = ["↑", "→", "↓", "←", "·"];
  for (let a = 0; a < arity; a += 1) {
    pad.appendChild(button(labels[a] ?? String(a), `action ${a}`, () => {
      session.act(a, controlledRole(session.view));
    }));
  }
  root.appendChild(pad);
  document.addEventListener("keydown", (ev) => {
    const action = ACTION_KEYS[ev.key];
    if (action !== undefined && action < arity) {
      session.act(action, controlledRole(session.view));
    }
  });
}

// When a delegation grant moved another role onto this participant, submits
// go to that role; otherwise the participant's own seat (if any).
function controlledRole(view: ViewState): string | undefined {
  if (view.delegated && view.delegated.targetKind === "human") {
    return view.delegated.role;
  }
  return undefined;
}

export function buildRewardButtons(root: HTMLElement, session: ClientSession): void {
  const box = document.createElement("div");
  box.className = "widget reward-buttons";
  box.appendChild(button("+1", "reward (key: +)", () => session.annotate(1)));
  box.appendChild(button("-1", "penalty (key: -)", () => session.annotate(-1)));
  root.appendChild(box);
  document.addEventListener("keydown", (ev) => {
    if (ev.key === "+") {
      session.annotate(1);
    } else if (ev.key === "-") {
      session.annotate(-1);
    }
  });
}

export function buildChat(root: HTMLElement, session: ClientSession): void {
  const box = document.createElement("div");
  box.className = "widget chat";
  const log = document.createElement("ul");
  log.className = "chat-log";
  box.appendChild(log);
  for (const channel of session.view.channels) {
    if (channel.alphabet) {
      const row = document.createElement("div");
      for (const symbol of channel.alphabet) {
        row.appendChild(button(symbol, `send ${symbol} on ${channel.name}`,
                               () => session.chat(channel.name, symbol)));
      }
      box.appendChild(row);
    } else {
      const input = document.createElement("input");
      input.maxLength = channel.max_len;
      input.placeholder = `${channel.name} (enter to send)`;
      input.addEventListener("keydown", (ev) => {
        if (ev.key === "Enter" && input.value) {
          session.chat(channel.name, input.value);
          input.value = "";
        }
      });
      box.appendChild(input);
    }
  }
  root.appendChild(box);
}

export function refreshChatLog(root: HTMLElement, view: ViewState): void {
  const log = root.querySelector(".chat-log");
  if (!log) {
    return;
  }
  log.innerHTML = "";
  for (const msg of view.transcripts.slice(-12)) {
    const li = document.createElement("li");
    li.textContent = `[${msg.channel}] ${msg.content}`;
    log.appendChild(li);
  }
}

export function buildDelegationToggle(root: HTMLElement, session: ClientSession): void {
  const box = document.createElement("div");
  box.className = "widget delegation";
  for (const role of session.view.agentRoles) {
    box.appendChild(button(`take ${role}`, `take control of ${role}`,
                           () => session.delegationGrant(role, "human")));
    box.appendChild(button(`cede ${role}`, `return control of ${role}`,
                           () => session.delegationRevoke(role)));
  }
  const status = document.createElement("span");
  status.className = "delegation-status";
  box.appendChild(status);
  root.appendChild(box);
}

export function buildIntentionDisplay(root: HTMLElement): void {
  const box = document.createElement("div");
  box.className = "widget intentions";
  root.appendChild(box);
}

export function refreshIntentions(root: HTMLElement, view: ViewState): void {
  const box = root.querySelector(".intentions");
  if (!box) {
    return;
  }
  box.textContent = view.intentions
    ? `intentions: ${view.intentions.map((t, i) => `seat${i}→${t}`).join("  ")}`
    : "";
}

export function buildRankingView(root: HTMLElement, session: ClientSession,
                                 getCtx: (id: string) => Ctx2D | null): () => void {
  const box = document.createElement("div");
  box.className = "widget ranking";
  root.appendChild(box);
  let viewer: TrajectoryViewer | null = null;
  let order: string[] = [];
  let timer: ReturnType<typeof setInterval> | null = null;

  const rebuild = () => {
    const query = session.view.activeQuery;
    box.innerHTML = "";
    if (!query) {
      if (timer) {
        clearInterval(timer);
        timer = null;
      }
      viewer = null;
      return;
    }
    if (!viewer) {
      viewer = new TrajectoryViewer(query.items);
      order = query.items.map((it) => it.item_id);
      // Fixed-rate playback of every card.
      timer = setInterval(() => {
        for (const item of query.items) {
          const frame = viewer!.advance(item.item_id);
          const ctx = getCtx(item.item_id);
          if (frame && ctx) {
            renderFrame(frame, ctx, 10);
          }
        }
        refresh();
      }, viewer.frameIntervalMs);
    }
    const list = document.createElement("ol");
    list.setAttribute("aria-label", "ranking, best first");
    order.forEach((itemId, index) => {
      const item = viewer!.item(itemId);
      const li = document.createElement("li");
      li.textContent = `${itemId} returns=(${item.returns.join(", ")}) `
        + (viewer!.hasWatched(itemId) ? "✓" : "…");
      const up = button("▲", `move ${itemId} up (key: u)`, () => {
        if (index > 0) {
          [order[index - 1], order[index]] = [order[index], order[index - 1]];
          rebuild();
        }
      });
      const down = button("▼", `move ${itemId} down`, () => {
        if (index < order.length - 1) {
          [order[index + 1], order[index]] = [order[index], order[index + 1]];
          rebuild();
        }
      });
      li.appendChild(up);
      li.appendChild(down);
      list.appendChild(li);
    });
    box.appendChild(list);
    const submit = button("submit ranking", "submit the ranking", () => {
      if (viewer!.allWatched()) {
        session.rank(order);
      }
    });
    submit.disabled = !viewer.allWatched();
    submit.className = "submit-ranking";
    box.appendChild(submit);
  };

  const refresh = rebuild;
  rebuild();
  return rebuild;
}
