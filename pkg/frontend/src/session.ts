// Client session: one socket, all state transitions driven by received
// envelopes. The client never fabricates tick values; every outgoing tick was
// first received from the server (ActRequest payload or a broadcast tick).

import {
  ControllerId,
  Envelope,
  MessageKind,
  PROTOCOL_VERSION,
  PrefItem,
  ProtocolError,
  RenderFrame,
  decodeEnvelope,
  encodeEnvelope,
} from "./protocol.js";

export interface Bootstrap {
  session_id: string;
  token: string;
  study_id: string;
  participant_id: string;
  ws_path: string;
  redirect_template?: string;
}

// Narrow socket surface so tests and node can inject their own transport.
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((data: string) => void) | null;
  onclose: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ChannelInfo {
  name: string;
  alphabet: string[] | null;
  max_len: number;
}

export interface ActRequest {
  tick: number;
  roles: string[];
  deadlineMs: number; // server clock
}

export interface ViewState {
  connection: "idle" | "connecting" | "open" | "closed";
  resumed: boolean;
  role: string | null;
  widgets: string[];
  episodes: number | null;
  episode: number;
  tick: number | null;          // latest tick received from the server
  actRequest: ActRequest | null;
  frame: RenderFrame | null;
  observations: Record<string, number[]>;
  intentions: number[] | null;
  actionArities: Record<string, number>;
  channels: ChannelInfo[];
  agentRoles: string[];
  transcripts: { channel: string; content: string }[];
  activeQuery: { queryId: string; items: PrefItem[] } | null;
  delegated: { role: string; targetKind: string } | null;
  delegationPrompt: { role: string; targetKind: string } | null;
  clockOffsetMs: number;        // server minus client, from heartbeat echoes
  completion: { reason: string; code?: string } | null;
  lastError: { code: string; message: string } | null;
  renderError: string | null;
}

function initialView(): ViewState {
  return {
    connection: "idle",
    resumed: false,
    role: null,
    widgets: [],
    episodes: null,
    episode: 0,
    tick: null,
    actRequest: null,
    frame: null,
    observations: {},
    intentions: null,
    actionArities: {},
    channels: [],
    agentRoles: [],
    transcripts: [],
    activeQuery: null,
    delegated: null,
    delegationPrompt: null,
    clockOffsetMs: 0,
    completion: null,
    lastError: null,
    renderError: null,
  };
}

export class ClientSession {
  view: ViewState = initialView();
  private socket: SocketLike | null = null;
  private wsBase = "";

  constructor(
    readonly boot: Bootstrap,
    private readonly makeSocket: SocketFactory,
    private readonly onChange: (view: ViewState) => void = () => {},
    private readonly now: () => number = Date.now,
  ) {}

  private changed(): void {
    this.onChange(this.view);
  }

  connect(wsBase: string): void {
    this.wsBase = wsBase;
    this.view.connection = "connecting";
    this.socket = this.makeSocket(`${wsBase}${this.boot.ws_path}`);
    this.socket.onopen = () => {
      this.view.connection = "open";
      this.sendJoin();
      this.changed();
    };
    this.socket.onmessage = (data) => this.receive(data);
    this.socket.onclose = () => {
      this.view.connection = "closed";
      this.changed();
    };
    this.changed();
  }

  reconnect(): void {
    // Same token: the server resumes the binding and replays a snapshot.
    if (this.socket) {
      this.socket.onclose = null;
      this.socket.close();
    }
    this.connect(this.wsBase);
  }

  private sender(): ControllerId {
    return { role: this.view.role ?? "pending", kind: "human", instance: 0 };
  }

  private send(kind: MessageKind, payload: Record<string, unknown>, tick?: number): void {
    if (!this.socket || this.view.connection !== "open") {
      return;
    }
    const envelope: Envelope = {
      v: PROTOCOL_VERSION,
      session: this.boot.session_id,
      sender: this.sender(),
      kind,
      payload,
      sent_at: this.now(),
    };
    if (tick !== undefined) {
      envelope.tick = tick;
    }
    this.socket.send(encodeEnvelope(envelope));
  }

  private sendJoin(): void {
    this.send("Join", {
      token: this.boot.token,
      study_id: this.boot.study_id,
      participant_id: this.boot.participant_id,
    });
  }

  heartbeat(): void {
    this.send("Heartbeat", { client_ms: this.now() });
  }

  // -- outgoing participant actions ----------------------------------------

  /** Submit an action for the current ActRequest; false when none is open. */
  act(action: number, role?: string): boolean {
    const request = this.view.actRequest;
    if (!request) {
      return false;
    }
    const payload: Record<string, unknown> = { action };
    if (role !== undefined) {
      payload.role = role;
    }
    this.send("ActSubmit", payload, request.tick);
    return true;
  }

  /** Timed feedback; available during playback, not gated on acting. */
  annotate(value: 1 | -1): boolean {
    if (this.view.tick === null) {
      return false; // no tick received yet; the client never invents one
    }
    this.send("RewardAnnotation", { value }, this.view.tick);
    return true;
  }

  chat(channel: string, content: string): boolean {
    if (this.view.tick === null) {
      return false;
    }
    this.send("ChannelMsg", { channel, content }, this.view.tick);
    return true;
  }

  rank(order: string[]): boolean {
    const query = this.view.activeQuery;
    if (!query) {
      return false;
    }
    this.send("PrefResponse", { query_id: query.queryId, ranking: order });
    this.view.activeQuery = null;
    this.changed();
    return true;
  }

  delegationRequest(role: string, targetKind: "human" | "agent"): boolean {
    if (this.view.tick === null) {
      return false;
    }
    this.send("DelegationRequest", { role, target_kind: targetKind }, this.view.tick);
    return true;
  }

  delegationGrant(role: string, targetKind: "human" | "agent"): boolean {
    if (this.view.tick === null) {
      return false;
    }
    this.send("DelegationGrant", { role, target_kind: targetKind }, this.view.tick);
    return true;
  }

  delegationRevoke(role: string): void {
    this.send("DelegationRevoke", { role });
  }

  // -- incoming -------------------------------------------------------------

  private receive(data: string): void {
    let envelope: Envelope;
    try {
      envelope = decodeEnvelope(data);
    } catch (err) {
      this.view.lastError = {
        code: err instanceof ProtocolError ? err.code : "MalformedFrame",
        message: String(err),
      };
      this.changed();
      return;
    }
    this.apply(envelope);
    this.changed();
  }

  private apply(env: Envelope): void {
    const view = this.view;
    const payload = env.payload as Record<string, any>;
    if (env.tick !== undefined) {
      view.tick = view.tick === null ? env.tick : Math.max(view.tick, env.tick);
    }
    switch (env.kind) {
      case "JoinAck": {
        if (payload.resumed) {
          view.resumed = true;
          const snap = payload.snapshot ?? {};
          if (typeof snap.tick === "number") {
            view.tick = snap.tick;
          }
          if (snap.observations) {
            view.observations = snap.observations;
          }
          if (snap.render) {
            view.frame = snap.render as RenderFrame;
          }
          if (typeof snap.episode === "number") {
            view.episode = snap.episode;
          }
          if (Array.isArray(snap.awaiting_roles) && view.role !== null
              && snap.awaiting_roles.includes(view.role)
              && typeof snap.tick === "number") {
            view.actRequest = { tick: snap.tick, roles: snap.awaiting_roles,
                                deadlineMs: 0 };
          }
        }
        break;
      }
      case "RoleAssign": {
        view.role = payload.role;
        view.widgets = payload.widgets ?? [];
        view.episodes = payload.episodes ?? null;
        view.actionArities = payload.action_arities ?? {};
        view.channels = payload.channels ?? [];
        view.agentRoles = payload.agent_roles ?? [];
        break;
      }
      case "StartEpisode": {
        view.episode = payload.episode;
        break;
      }
      case "ObserveBroadcast": {
        view.observations = payload.observations ?? {};
        if (payload.render) {
          view.frame = payload.render as RenderFrame;
        }
        break;
      }
      case "ActRequest": {
        const roles: string[] = payload.roles ?? [];
        if (view.role !== null && roles.includes(view.role)) {
          view.actRequest = { tick: payload.tick, roles, deadlineMs: payload.deadline_ms };
        } else {
          view.actRequest = null;
        }
        break;
      }
      case "StepBroadcast": {
        view.observations = payload.observations ?? view.observations;
        if (payload.render) {
          view.frame = payload.render as RenderFrame;
        }
        const intentions = payload.info?.intentions;
        view.intentions = Array.isArray(intentions) ? intentions : view.intentions;
        // Actions are disabled until the next ActRequest names us again.
        if (view.actRequest && env.tick !== undefined && view.actRequest.tick <= env.tick) {
          view.actRequest = null;
        }
        break;
      }
      case "ChannelMsg": {
        view.transcripts.push({ channel: payload.channel, content: payload.content });
        break;
      }
      case "DelegationRequest": {
        view.delegationPrompt = { role: payload.role, targetKind: payload.target_kind };
        break;
      }
      case "DelegationGrant": {
        view.delegated = { role: payload.role, targetKind: payload.target_kind };
        view.delegationPrompt = null;
        break;
      }
      case "DelegationRevoke": {
        if (view.delegated && view.delegated.role === payload.role) {
          view.delegated = null;
        }
        break;
      }
      case "PrefQuery": {
        view.activeQuery = { queryId: payload.query_id, items: payload.items ?? [] };
        break;
      }
      case "EpisodeEnd": {
        view.actRequest = null;
        break;
      }
      case "SessionEnd": {
        view.completion = { reason: payload.reason, code: payload.completion_code };
        view.actRequest = null;
        break;
      }
      case "Heartbeat": {
        if (typeof payload.client_ms === "number" && typeof payload.server_ms === "number") {
          const rtt = this.now() - payload.client_ms;
          view.clockOffsetMs = payload.server_ms - (payload.client_ms + rtt / 2);
        }
        break;
      }
      case "Error": {
        view.lastError = { code: payload.code, message: payload.message };
        break;
      }
      default:
        break;
    }
  }

  /** Deadline countdown in server time, corrected by the measured offset. */
  deadlineRemainingMs(): number | null {
    const request = this.view.actRequest;
    if (!request) {
      return null;
    }
    return request.deadlineMs - (this.now() + this.view.clockOffsetMs);
  }

  completionRedirect(): string | null {
    const completion = this.view.completion;
    const template = this.boot.redirect_template;
    if (!completion?.code || !template) {
      return null;
    }
    return template.replace("{CODE}", completion.code);
  }

  close(): void {
    this.socket?.close();
  }
}
