// Entry point: read the bootstrap the server injected (or fetch it from the
// /join endpoint using the page's query parameters), open the socket, and
// keep the DOM in sync with the session view.

import { ClientSession, Bootstrap, SocketLike, ViewState } from "./session.js";
import { renderFrame, Ctx2D } from "./render.js";
import {
  buildActionPad,
  buildChat,
  buildDelegationToggle,
  buildIntentionDisplay,
  buildRankingView,
  buildRewardButtons,
  refreshChatLog,
  refreshIntentions,
} from "./widgets.js";

declare global {
  interface Window {
    __LOOPSTAGE__?: Bootstrap;
  }
}

function browserSocket(url: string): SocketLike {
  const ws = new WebSocket(url);
  const wrapper: SocketLike = {
    send: (data) => ws.send(data),
    close: () => ws.close(),
    onopen: null,
    onmessage: null,
    onclose: null,
  };
  ws.onopen = () => wrapper.onopen?.();
  ws.onmessage = (ev) => wrapper.onmessage?.(String(ev.data));
  ws.onclose = () => wrapper.onclose?.();
  return wrapper;
}

async function bootstrap(): Promise<Bootstrap> {
  if (window.__LOOPSTAGE__) {
    return window.__LOOPSTAGE__;
  }
  const params = new URLSearchParams(window.location.search);
  if (!params.get("pid") || !params.get("study")) {
    throw new Error("missing entry parameters: this page needs ?study=...&pid=...");
  }
  const response = await fetch(`/join?${params.toString()}`,
                               { headers: { Accept: "application/json" } });
  if (!response.ok) {
    const body = await response.json().catch(() => ({}));
    throw new Error(body?.error?.message ?? `join failed (${response.status})`);
  }
  return (await response.json()) as Bootstrap;
}

function el<K extends keyof HTMLElementTagNameMap>(tag: K, id?: string) {
  const node = document.createElement(tag);
  if (id) {
    node.id = id;
  }
  return node;
}

async function start(): Promise<void> {
  const app = document.getElementById("app") ?? document.body;
  app.innerHTML = "";
  let boot: Bootstrap;
  try {
    boot = await bootstrap();
  } catch (err) {
    const block = el("div", "entry-error");
    block.textContent = String(err instanceof Error ? err.message : err);
    app.appendChild(block);
    return; // blocking error page: no session without entry parameters
  }

  const status = el("div", "status");
  const countdown = el("div", "countdown");
  const canvas = el("canvas", "stage") as HTMLCanvasElement;
  canvas.width = 640;
  canvas.height = 480;
  canvas.tabIndex = 0;
  const widgets = el("div", "widgets");
  const completion = el("div", "completion");
  app.append(status, countdown, canvas, widgets, completion);

  let widgetsBuilt = false;
  let refreshRanking: (() => void) | null = null;

  const session = new ClientSession(boot, browserSocket, (view) => {
    requestAnimationFrame(() => sync(view));
  });

  const rankingCtx = (itemId: string): Ctx2D | null => {
    let card = document.getElementById(`traj-${itemId}`) as HTMLCanvasElement | null;
    if (!card) {
      card = el("canvas") as HTMLCanvasElement;
      card.id = `traj-${itemId}`;
      card.width = 200;
      card.height = 200;
      widgets.appendChild(card);
    }
    return card.getContext("2d") as unknown as Ctx2D;
  };

  function sync(view: ViewState): void {
    status.textContent =
      `${boot.study_id} · ${view.role ?? "joining"} · episode ${view.episode}` +
      (view.episodes ? `/${view.episodes}` : "") +
      ` · tick ${view.tick ?? "-"} · ${view.connection}` +
      (view.lastError ? ` · ${view.lastError.code}` : "");

    if (!widgetsBuilt && view.role !== null) {
      widgetsBuilt = true;
      for (const widget of view.widgets) {
        if (widget === "action_pad") {
          buildActionPad(widgets, session);
        } else if (widget === "reward_buttons") {
          buildRewardButtons(widgets, session);
        } else if (widget === "chat") {
          buildChat(widgets, session);
        } else if (widget === "delegation_toggle") {
          buildDelegationToggle(widgets, session);
        } else if (widget === "intention_display") {
          buildIntentionDisplay(widgets);
        } else if (widget === "ranking_view") {
          refreshRanking = buildRankingView(widgets, session, rankingCtx);
        }
      }
    }

    if (view.frame) {
      const ctx = canvas.getContext("2d") as unknown as Ctx2D | null;
      if (ctx) {
        try {
          renderFrame(view.frame, ctx, Math.floor(
            Math.min(canvas.width / view.frame.width,
                     (canvas.height - 48) / view.frame.height)));
          view.renderError = null;
        } catch (err) {
          // Error boundary: a malformed frame must not take the session down.
          view.renderError = String(err);
          status.textContent += " · render error";
        }
      }
    }

    const remaining = session.deadlineRemainingMs();
    countdown.textContent = remaining !== null && remaining > 0
      ? `act within ${(remaining / 1000).toFixed(1)}s`
      : "";

    refreshChatLog(widgets, view);
    refreshIntentions(widgets, view);
    refreshRanking?.();

    const deleg = widgets.querySelector(".delegation-status");
    if (deleg) {
      deleg.textContent = view.delegated
        ? `controlling ${view.delegated.role}`
        : view.delegationPrompt
          ? `${view.delegationPrompt.role} asks for takeover`
          : "";
    }

    if (view.completion) {
      const redirect = session.completionRedirect();
      completion.innerHTML = "";
      const head = el("h2");
      head.textContent = `session ${view.completion.reason}`;
      completion.appendChild(head);
      if (view.completion.code) {
        const code = el("p", "completion-code");
        code.textContent = `completion code: ${view.completion.code}`;
        completion.appendChild(code);
      }
      if (redirect) {
        const link = el("a") as HTMLAnchorElement;
        link.href = redirect;
        link.textContent = "return to the study platform";
        completion.appendChild(link);
      }
    }

    if (view.connection === "closed" && !view.completion) {
      // Reconnect with the same token; the server restores the snapshot.
      setTimeout(() => session.reconnect(), 500);
    }
  }

  session.connect(`${window.location.protocol === "https:" ? "wss" : "ws"}://`
    + window.location.host);
  setInterval(() => session.heartbeat(), 5000);
}

start();
