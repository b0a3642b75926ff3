"""Typed message layer between participant clients, the server, and bridged envs.

One JSON object per frame over a persistent full-duplex socket. The frame
schema per kind, with one canonical example each, lives in docs/protocol.md
and is golden-file tested.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Union

PROTOCOL_VERSION = 1

SERVER_SENDER = "server"


class ProtocolError(Exception):
    """Base for all protocol-layer failures."""

    code = "ProtocolError"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details


class InvalidEnvelope(ProtocolError):
    code = "InvalidEnvelope"


class MalformedFrame(ProtocolError):
    code = "MalformedFrame"


class UnknownKind(ProtocolError):
    code = "UnknownKind"


class SchemaViolation(ProtocolError):
    code = "SchemaViolation"

    def __init__(self, message: str, field_name: str, **details: Any):
        super().__init__(message, field=field_name, **details)
        self.field = field_name


class VersionMismatch(ProtocolError):
    code = "VersionMismatch"


class ProtocolViolation(ProtocolError):
    code = "ProtocolViolation"

    def __init__(self, state: "ProtocolState", kind: "MessageKind"):
        super().__init__(f"{kind.value} not allowed in state {state.value}",
                         state=state.value, kind=kind.value)
        self.state = state
        self.kind = kind


class MessageKind(str, Enum):
    JOIN = "Join"
    JOIN_ACK = "JoinAck"
    ROLE_ASSIGN = "RoleAssign"
    START_EPISODE = "StartEpisode"
    OBSERVE_BROADCAST = "ObserveBroadcast"
    ACT_REQUEST = "ActRequest"
    ACT_SUBMIT = "ActSubmit"
    STEP_BROADCAST = "StepBroadcast"
    REWARD_ANNOTATION = "RewardAnnotation"
    CHANNEL_MSG = "ChannelMsg"
    DELEGATION_REQUEST = "DelegationRequest"
    DELEGATION_GRANT = "DelegationGrant"
    DELEGATION_REVOKE = "DelegationRevoke"
    PREF_QUERY = "PrefQuery"
    PREF_RESPONSE = "PrefResponse"
    EPISODE_END = "EpisodeEnd"
    SESSION_END = "SessionEnd"
    HEARTBEAT = "Heartbeat"
    ERROR = "Error"


# Kinds that carry a tick. Everything else must have tick == None.
TICKED_KINDS = frozenset({
    MessageKind.ACT_SUBMIT,
    MessageKind.STEP_BROADCAST,
    MessageKind.REWARD_ANNOTATION,
    MessageKind.CHANNEL_MSG,
    MessageKind.DELEGATION_REQUEST,
    MessageKind.DELEGATION_GRANT,
})


@dataclass(frozen=True)
class ControllerId:
    role_name: str
    controller_kind: str  # "human" | "agent"
    instance: int = 0

    def __post_init__(self):
        if self.controller_kind not in ("human", "agent"):
            raise InvalidEnvelope(
                f"controller_kind must be human or agent, got {self.controller_kind!r}")
        if self.instance < 0:
            raise InvalidEnvelope("controller instance must be non-negative")

    def to_json(self) -> dict:
        return {"role": self.role_name, "kind": self.controller_kind,
                "instance": self.instance}

    @classmethod
    def from_json(cls, obj: dict) -> "ControllerId":
        return cls(role_name=obj["role"], controller_kind=obj["kind"],
                   instance=obj.get("instance", 0))


Sender = Union[ControllerId, str]


@dataclass(frozen=True)
class Envelope:
    session_id: str
    sender: Sender
    kind: MessageKind
    payload: dict = field(default_factory=dict)
    tick: Optional[int] = None
    sent_at: int = 0
    protocol_version: int = PROTOCOL_VERSION


# ---------------------------------------------------------------------------
# Payload schemas. Each kind has exactly one schema: a map of field name to
# (required, type check). Unknown payload fields are a SchemaViolation.

def _is_action(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) or (
        isinstance(v, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in v))


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_str(v: Any) -> bool:
    return isinstance(v, str)


def _is_bool(v: Any) -> bool:
    return isinstance(v, bool)


def _is_list(v: Any) -> bool:
    return isinstance(v, list)


def _is_dict(v: Any) -> bool:
    return isinstance(v, dict)


def _is_annotation_value(v: Any) -> bool:
    return _is_int(v) and v in (-1, 1)


def _is_target_kind(v: Any) -> bool:
    return v in ("human", "agent")


def _is_str_or_null(v: Any) -> bool:
    return v is None or isinstance(v, str)


# field -> (required, checker, description-of-expected)
PAYLOAD_SCHEMAS: dict[MessageKind, dict[str, tuple[bool, Any, str]]] = {
    MessageKind.JOIN: {
        "token": (True, _is_str, "string"),
        "study_id": (True, _is_str, "string"),
        "participant_id": (True, _is_str, "string"),
        "requested_role": (False, _is_str_or_null, "string or null"),
    },
    MessageKind.JOIN_ACK: {
        "resumed": (True, _is_bool, "bool"),
        "snapshot": (False, _is_dict, "object"),
    },
    MessageKind.ROLE_ASSIGN: {
        "role": (True, _is_str, "string"),
        "controller_kind": (True, _is_str, "string"),
        "instance": (True, _is_int, "integer"),
        "widgets": (True, _is_list, "list"),
        "study_id": (True, _is_str, "string"),
        "episodes": (True, _is_int, "integer"),
        "action_arities": (False, _is_dict, "object"),
        "channels": (False, _is_list, "list"),
        "agent_roles": (False, _is_list, "list"),
    },
    MessageKind.START_EPISODE: {
        "episode": (True, _is_int, "integer"),
    },
    MessageKind.OBSERVE_BROADCAST: {
        "episode": (True, _is_int, "integer"),
        "observations": (True, _is_dict, "object"),
        "render": (False, _is_dict, "object"),
    },
    MessageKind.ACT_REQUEST: {
        "tick": (True, _is_int, "integer"),
        "roles": (True, _is_list, "list"),
        "deadline_ms": (True, _is_int, "integer"),
    },
    MessageKind.ACT_SUBMIT: {
        "action": (True, _is_action, "integer or integer list"),
        "role": (False, _is_str, "string"),
    },
    MessageKind.STEP_BROADCAST: {
        "observations": (True, _is_dict, "object"),
        "actions": (False, _is_dict, "object"),
        "rewards": (True, _is_dict, "object"),
        "terminated": (True, _is_bool, "bool"),
        "truncated": (True, _is_bool, "bool"),
        "info": (True, _is_dict, "object"),
        "render": (False, _is_dict, "object"),
    },
    MessageKind.REWARD_ANNOTATION: {
        "value": (True, _is_annotation_value, "-1 or +1"),
    },
    MessageKind.CHANNEL_MSG: {
        "channel": (True, _is_str, "string"),
        "content": (True, _is_str, "string"),
    },
    MessageKind.DELEGATION_REQUEST: {
        "role": (True, _is_str, "string"),
        "target_kind": (True, _is_target_kind, "human or agent"),
    },
    MessageKind.DELEGATION_GRANT: {
        "role": (True, _is_str, "string"),
        "target_kind": (True, _is_target_kind, "human or agent"),
    },
    MessageKind.DELEGATION_REVOKE: {
        "role": (True, _is_str, "string"),
    },
    MessageKind.PREF_QUERY: {
        "query_id": (True, _is_str, "string"),
        "items": (True, _is_list, "list"),
    },
    MessageKind.PREF_RESPONSE: {
        "query_id": (True, _is_str, "string"),
        "ranking": (True, _is_list, "list"),
    },
    MessageKind.EPISODE_END: {
        "episode": (True, _is_int, "integer"),
        "terminated": (True, _is_bool, "bool"),
        "truncated": (True, _is_bool, "bool"),
        "returns": (True, _is_dict, "object"),
    },
    MessageKind.SESSION_END: {
        "reason": (True, _is_str, "string"),
        "completion_code": (False, _is_str, "string"),
    },
    MessageKind.HEARTBEAT: {
        "client_ms": (False, _is_int, "integer"),
        "server_ms": (False, _is_int, "integer"),
    },
    MessageKind.ERROR: {
        "code": (True, _is_str, "string"),
        "message": (True, _is_str, "string"),
        "field": (False, _is_str, "string"),
    },
}


def validate_payload(kind: MessageKind, payload: dict) -> None:
    schema = PAYLOAD_SCHEMAS[kind]
    for name, (required, check, expected) in schema.items():
        if name not in payload:
            if required:
                raise SchemaViolation(
                    f"{kind.value} payload missing required field {name!r}", name)
            continue
        if not check(payload[name]):
            raise SchemaViolation(
                f"{kind.value} payload field {name!r} must be {expected}", name)
    for name in payload:
        if name not in schema:
            raise SchemaViolation(
                f"{kind.value} payload has unknown field {name!r}", name)


def check_envelope(env: Envelope) -> None:
    """Raise InvalidEnvelope / SchemaViolation if the envelope breaks an invariant."""
    if env.protocol_version != PROTOCOL_VERSION:
        raise InvalidEnvelope(
            f"protocol_version must be {PROTOCOL_VERSION}, got {env.protocol_version}")
    if not isinstance(env.kind, MessageKind):
        raise InvalidEnvelope(f"unknown message kind {env.kind!r}")
    if env.kind in TICKED_KINDS:
        if env.tick is None or env.tick < 0:
            raise InvalidEnvelope(f"{env.kind.value} requires a non-negative tick")
    elif env.tick is not None:
        raise InvalidEnvelope(f"{env.kind.value} must not carry a tick")
    if not isinstance(env.sender, ControllerId) and env.sender != SERVER_SENDER:
        raise InvalidEnvelope(f"sender must be a ControllerId or {SERVER_SENDER!r}")
    validate_payload(env.kind, env.payload)


def encode_envelope(env: Envelope) -> bytes:
    """Canonical UTF-8 frame; decode(encode(e)) == e."""
    check_envelope(env)
    obj: dict[str, Any] = {
        "v": env.protocol_version,
        "session": env.session_id,
        "sender": env.sender.to_json() if isinstance(env.sender, ControllerId) else env.sender,
        "kind": env.kind.value,
        "payload": env.payload,
        "sent_at": env.sent_at,
    }
    if env.tick is not None:
        obj["tick"] = env.tick
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


_KIND_BY_VALUE = {k.value: k for k in MessageKind}

_FRAME_FIELDS = frozenset({"v", "session", "sender", "kind", "payload", "sent_at", "tick"})


def decode_envelope(data: bytes) -> Envelope:
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFrame(f"frame is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedFrame("frame must be a JSON object")
    for name in ("v", "session", "sender", "kind", "payload", "sent_at"):
        if name not in obj:
            raise MalformedFrame(f"frame missing field {name!r}")
    for name in obj:
        if name not in _FRAME_FIELDS:
            raise MalformedFrame(f"frame has unknown field {name!r}")
    if obj["v"] != PROTOCOL_VERSION:
        raise VersionMismatch(f"unsupported protocol version {obj['v']!r}")
    kind = _KIND_BY_VALUE.get(obj["kind"])
    if kind is None:
        raise UnknownKind(f"unknown message kind {obj['kind']!r}")
    sender_raw = obj["sender"]
    if sender_raw == SERVER_SENDER:
        sender: Sender = SERVER_SENDER
    elif isinstance(sender_raw, dict):
        try:
            sender = ControllerId.from_json(sender_raw)
        except (KeyError, InvalidEnvelope) as exc:
            raise MalformedFrame(f"bad sender: {exc}") from None
    else:
        raise MalformedFrame(f"bad sender {sender_raw!r}")
    tick = obj.get("tick")
    if tick is not None and (not _is_int(tick) or tick < 0):
        raise MalformedFrame("tick must be a non-negative integer")
    if not isinstance(obj["payload"], dict):
        raise MalformedFrame("payload must be an object")
    if not _is_int(obj["sent_at"]):
        raise MalformedFrame("sent_at must be an integer")
    env = Envelope(
        session_id=obj["session"],
        sender=sender,
        kind=kind,
        payload=obj["payload"],
        tick=tick,
        sent_at=obj["sent_at"],
    )
    if kind in TICKED_KINDS:
        if tick is None:
            raise SchemaViolation(f"{kind.value} requires a tick", "tick")
    elif tick is not None:
        raise SchemaViolation(f"{kind.value} must not carry a tick", "tick")
    validate_payload(kind, env.payload)
    return env


# ---------------------------------------------------------------------------
# Session-level protocol state machine. The successor for a few transitions
# depends on session facts the kind alone cannot know (is the room full? did
# this submit complete the barrier?); those enter through TransitionContext.
# The full table is documented in docs/protocol.md.

class ProtocolState(str, Enum):
    LOBBY = "Lobby"
    ASSIGNED = "Assigned"
    IN_EPISODE = "InEpisode"
    AWAITING_ACTIONS = "AwaitingActions"
    BETWEEN_EPISODES = "BetweenEpisodes"
    ENDED = "Ended"


@dataclass(frozen=True)
class TransitionContext:
    joins_complete: bool = False     # this Join filled the last vacant human role
    barrier_complete: bool = False   # this ActSubmit was the last missing action
    episode_done: bool = False       # this StepBroadcast ended the episode
    pref_query_open: bool = False    # an unanswered PrefQuery exists
    resume: bool = False             # Join carries a token already bound


_ANY_LIVE = (ProtocolState.LOBBY, ProtocolState.ASSIGNED, ProtocolState.IN_EPISODE,
             ProtocolState.AWAITING_ACTIONS, ProtocolState.BETWEEN_EPISODES)

_IN_PLAY = (ProtocolState.AWAITING_ACTIONS, ProtocolState.IN_EPISODE,
            ProtocolState.BETWEEN_EPISODES)


def validate_transition(state: ProtocolState, incoming: Envelope,
                        ctx: TransitionContext = TransitionContext()) -> ProtocolState:
    """Return the successor state, or raise ProtocolViolation for (state, kind)."""
    kind = incoming.kind

    if kind is MessageKind.HEARTBEAT or kind is MessageKind.ERROR:
        return state

    if state is ProtocolState.ENDED:
        raise ProtocolViolation(state, kind)

    if kind is MessageKind.SESSION_END:
        return ProtocolState.ENDED

    if kind is MessageKind.JOIN:
        if ctx.resume:
            return state
        if state in (ProtocolState.LOBBY, ProtocolState.ASSIGNED):
            return ProtocolState.BETWEEN_EPISODES if ctx.joins_complete else ProtocolState.ASSIGNED
        raise ProtocolViolation(state, kind)

    if kind in (MessageKind.JOIN_ACK, MessageKind.ROLE_ASSIGN):
        return state

    if kind is MessageKind.START_EPISODE:
        if state is ProtocolState.BETWEEN_EPISODES:
            return ProtocolState.AWAITING_ACTIONS
        raise ProtocolViolation(state, kind)

    if kind in (MessageKind.OBSERVE_BROADCAST, MessageKind.ACT_REQUEST):
        if state is ProtocolState.AWAITING_ACTIONS:
            return state
        raise ProtocolViolation(state, kind)

    if kind is MessageKind.ACT_SUBMIT:
        if state is ProtocolState.AWAITING_ACTIONS:
            return ProtocolState.IN_EPISODE if ctx.barrier_complete else state
        raise ProtocolViolation(state, kind)

    if kind is MessageKind.STEP_BROADCAST:
        # AwaitingActions covers the timeout path, where no final ActSubmit arrives.
        if state in (ProtocolState.IN_EPISODE, ProtocolState.AWAITING_ACTIONS):
            return ProtocolState.BETWEEN_EPISODES if ctx.episode_done else ProtocolState.AWAITING_ACTIONS
        raise ProtocolViolation(state, kind)

    if kind is MessageKind.EPISODE_END:
        if state in (ProtocolState.IN_EPISODE, ProtocolState.AWAITING_ACTIONS,
                     ProtocolState.BETWEEN_EPISODES):
            return ProtocolState.BETWEEN_EPISODES
        raise ProtocolViolation(state, kind)

    if kind in (MessageKind.REWARD_ANNOTATION, MessageKind.CHANNEL_MSG,
                MessageKind.DELEGATION_REQUEST, MessageKind.DELEGATION_GRANT,
                MessageKind.DELEGATION_REVOKE):
        if state in _IN_PLAY:
            return state
        raise ProtocolViolation(state, kind)

    if kind is MessageKind.PREF_QUERY:
        if state in _IN_PLAY:
            return state
        raise ProtocolViolation(state, kind)

    if kind is MessageKind.PREF_RESPONSE:
        if state in _IN_PLAY and ctx.pref_query_open:
            return state
        raise ProtocolViolation(state, kind)

    raise ProtocolViolation(state, kind)
