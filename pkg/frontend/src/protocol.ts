// Wire protocol: one canonical JSON envelope per frame, byte-compatible with
// the server's encoding (sorted keys, compact separators).

export const PROTOCOL_VERSION = 1;

export type ControllerKind = "human" | "agent";

export interface ControllerId {
  role: string;
  kind: ControllerKind;
  instance: number;
}

export type Sender = "server" | ControllerId;

export const MESSAGE_KINDS = [
  "Join", "JoinAck", "RoleAssign", "StartEpisode", "ObserveBroadcast",
  "ActRequest", "ActSubmit", "StepBroadcast", "RewardAnnotation", "ChannelMsg",
  "DelegationRequest", "DelegationGrant", "DelegationRevoke", "PrefQuery",
  "PrefResponse", "EpisodeEnd", "SessionEnd", "Heartbeat", "Error",
] as const;

export type MessageKind = (typeof MESSAGE_KINDS)[number];

const KIND_SET: Set<string> = new Set(MESSAGE_KINDS);

// Kinds whose envelope carries a tick; everything else must omit it.
export const TICKED_KINDS: Set<MessageKind> = new Set([
  "ActSubmit", "StepBroadcast", "RewardAnnotation", "ChannelMsg",
  "DelegationRequest", "DelegationGrant",
]);

export interface Envelope {
  v: number;
  session: string;
  sender: Sender;
  kind: MessageKind;
  tick?: number;
  payload: Record<string, unknown>;
  sent_at: number;
}

export class ProtocolError extends Error {
  constructor(readonly code: string, message: string) {
    super(message);
  }
}

// JSON.stringify with recursively sorted object keys: matches the server's
// canonical encoding so round-trips are byte-exact.
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  const obj = value as Record<string, unknown>;
  const keys = Object.keys(obj).sort();
  const parts = keys.map((k) => JSON.stringify(k) + ":" + canonicalJson(obj[k]));
  return "{" + parts.join(",") + "}";
}

export function encodeEnvelope(env: Envelope): string {
  if (env.v !== PROTOCOL_VERSION) {
    throw new ProtocolError("InvalidEnvelope", `unsupported version ${env.v}`);
  }
  if (!KIND_SET.has(env.kind)) {
    throw new ProtocolError("InvalidEnvelope", `unknown kind ${env.kind}`);
  }
  const ticked = TICKED_KINDS.has(env.kind);
  if (ticked && (env.tick === undefined || env.tick < 0)) {
    throw new ProtocolError("InvalidEnvelope", `${env.kind} requires a tick`);
  }
  if (!ticked && env.tick !== undefined) {
    throw new ProtocolError("InvalidEnvelope", `${env.kind} must not carry a tick`);
  }
  const frame: Record<string, unknown> = {
    v: env.v,
    session: env.session,
    sender: env.sender,
    kind: env.kind,
    payload: env.payload,
    sent_at: env.sent_at,
  };
  if (env.tick !== undefined) {
    frame.tick = env.tick;
  }
  return canonicalJson(frame);
}

export function decodeEnvelope(text: string): Envelope {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (err) {
    throw new ProtocolError("MalformedFrame", `not valid JSON: ${err}`);
  }
  if (raw === null || typeof raw !== "object" || Array.isArray(raw)) {
    throw new ProtocolError("MalformedFrame", "frame must be a JSON object");
  }
  const obj = raw as Record<string, unknown>;
  for (const field of ["v", "session", "sender", "kind", "payload", "sent_at"]) {
    if (!(field in obj)) {
      throw new ProtocolError("MalformedFrame", `frame missing field ${field}`);
    }
  }
  if (obj.v !== PROTOCOL_VERSION) {
    throw new ProtocolError("VersionMismatch", `unsupported version ${obj.v}`);
  }
  const kind = obj.kind as string;
  if (!KIND_SET.has(kind)) {
    throw new ProtocolError("UnknownKind", `unknown kind ${kind}`);
  }
  const tick = obj.tick as number | undefined;
  if (TICKED_KINDS.has(kind as MessageKind)) {
    if (typeof tick !== "number") {
      throw new ProtocolError("SchemaViolation", `${kind} requires a tick`);
    }
  } else if (tick !== undefined) {
    throw new ProtocolError("SchemaViolation", `${kind} must not carry a tick`);
  }
  return {
    v: PROTOCOL_VERSION,
    session: obj.session as string,
    sender: obj.sender as Sender,
    kind: kind as MessageKind,
    tick,
    payload: obj.payload as Record<string, unknown>,
    sent_at: obj.sent_at as number,
  };
}

// Render frame primitives as broadcast by the server.

export interface FrameCell {
  x: number;
  y: number;
  kind: string;
  walls?: string;
}

export interface FrameSprite {
  x: number;
  y: number;
  kind: string;
  label?: string;
}

export interface RenderFrame {
  mode: "grid" | "sprite_list" | "scalar_gauge";
  width: number;
  height: number;
  cells: FrameCell[];
  sprites: FrameSprite[];
  overlay_text: string[];
}

export interface PrefItem {
  item_id: string;
  returns: number[];
  length: number;
  frames: RenderFrame[];
}
