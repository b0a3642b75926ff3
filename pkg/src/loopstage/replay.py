"""Offline reconstruction of sessions from their event logs.

Replay feeds the logged external events through a fresh SessionCore and
recomputes everything else; per-tick state hashes must agree with the logged
ones. The log embeds the canonical experiment definition, so nothing beyond
the log file is needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .agents.trajectory import Trajectory, TrajectoryStep
from .config import experiment_hash, parse_experiment
from .core import SessionCore, episode_seed
from .envs import make_env
from .events import EXTERNAL_KINDS, CorruptLog, Event, HashMismatch, read_log
from .protocol import Envelope, MessageKind, ProtocolState, TransitionContext, validate_transition


class ReplayExecutionError(CorruptLog):
    pass


@dataclass
class ReplayResult:
    session_id: str
    ticks_checked: int
    recomputed: list      # (tick, digest)
    logged: list          # (tick, digest)
    first_divergence: Optional[int]  # tick, or None when everything matched

    @property
    def ok(self) -> bool:
        return self.first_divergence is None and self.ticks_checked == len(self.logged)


def _core_from_header(header, created_payload: dict) -> SessionCore:
    experiment = parse_experiment(created_payload["experiment_toml"])
    if experiment_hash(experiment) != header.experiment_hash:
        raise CorruptLog("embedded experiment does not match the header hash")
    return SessionCore(experiment, header.master_seed, header.session_id,
                       header.build_id)


def _dispatch(core: SessionCore, event: Event):
    kind, payload, wall = event.kind, event.payload, event.wall_time_ms
    if kind == MessageKind.JOIN.value:
        return core.ext_join(payload, wall)
    if kind == MessageKind.ACT_SUBMIT.value:
        return core.ext_act_submit(payload, event.tick, wall)
    if kind == MessageKind.REWARD_ANNOTATION.value:
        return core.ext_reward_annotation(payload, event.tick, wall)
    if kind == MessageKind.CHANNEL_MSG.value:
        return core.ext_channel_msg(payload, event.tick, wall)
    if kind == MessageKind.DELEGATION_REQUEST.value:
        return core.ext_delegation_request(payload, event.tick, wall)
    if kind == MessageKind.DELEGATION_GRANT.value:
        return core.ext_delegation_grant(payload, event.tick, wall)
    if kind == MessageKind.DELEGATION_REVOKE.value:
        return core.ext_delegation_revoke(payload, wall)
    if kind == MessageKind.PREF_RESPONSE.value:
        return core.ext_pref_response(payload, wall)
    if kind == MessageKind.START_EPISODE.value:
        return core.ext_start_episode(payload, wall)
    if kind == "TimeoutSubstitution":
        return core.ext_timeout_substitution(payload, wall)
    if kind == "TickAdvance":
        return core.ext_tick_advance(payload, wall)
    if kind == "EndRequested":
        return core.ext_end_requested(payload, wall)
    if kind == "BindingSuspended":
        return core.ext_binding_suspended(payload, wall)
    if kind == "BindingResumed":
        return core.ext_binding_resumed(payload, wall)
    raise CorruptLog(f"unhandled external kind {kind!r}")


def replay(path: "str | Path") -> ReplayResult:
    """Re-execute a session log; compare recomputed and logged state hashes."""
    header, events = read_log(path)
    if not events or events[0].kind != "SessionCreated":
        raise CorruptLog("log must begin with SessionCreated")
    core = _core_from_header(header, events[0].payload)
    boot = core.bootstrap(events[0].wall_time_ms)

    recomputed: list = []
    logged: list = []

    boot_payload = next(p for k, _, p in boot.logged if k == "SessionCreated")
    if boot_payload["initial_state_digest"] != events[0].payload.get("initial_state_digest"):
        raise HashMismatch(-1, events[0].payload.get("initial_state_digest", 0),
                           boot_payload["initial_state_digest"])

    for event in events[1:]:
        if event.kind == "StateHash":
            logged.append((event.tick, event.payload["digest"]))
            continue
        if event.kind not in EXTERNAL_KINDS:
            continue
        try:
            result = _dispatch(core, event)
        except (HashMismatch, CorruptLog):
            raise
        except Exception as exc:
            raise ReplayExecutionError(
                f"replay failed applying seq {event.seq} ({event.kind}): {exc}") from exc
        for kind, tick, payload in result.logged:
            if kind == "StateHash":
                recomputed.append((tick, payload["digest"]))

    first_divergence = None
    for (lt, ld), (rt, rd) in zip(logged, recomputed):
        if lt != rt or ld != rd:
            first_divergence = lt
            break
    # Recomputed hashes beyond the logged tail are the truncated-log case:
    # the prefix still verifies. Falling short of the log is a real failure.
    if first_divergence is None and len(recomputed) < len(logged):
        first_divergence = logged[len(recomputed)][0]
    return ReplayResult(session_id=header.session_id,
                        ticks_checked=len(logged) if first_divergence is None
                        else min(len(logged), len(recomputed)),
                        recomputed=recomputed, logged=logged,
                        first_divergence=first_divergence)


def verify(path: "str | Path") -> ReplayResult:
    """replay() that raises HashMismatch on the first divergent tick."""
    result = replay(path)
    if result.first_divergence is not None:
        idx = next((i for i, pair in enumerate(result.logged)
                    if i >= len(result.recomputed) or pair != result.recomputed[i]), None)
        expected = result.logged[idx][1] if idx is not None and idx < len(result.logged) else 0
        actual = (result.recomputed[idx][1] if idx is not None
                  and idx < len(result.recomputed) else 0)
        raise HashMismatch(result.first_divergence, expected, actual)
    return result


# ---------------------------------------------------------------------------
# Trajectory export

def export_trajectories(path: "str | Path") -> list:
    """Rebuild per-episode trajectories from the logged step records."""
    header, events = read_log(path)
    if not events or events[0].kind != "SessionCreated":
        raise CorruptLog("log must begin with SessionCreated")
    experiment = parse_experiment(events[0].payload["experiment_toml"])
    probe = make_env(experiment.env_id, experiment.env_params)
    seat_roles = sorted(experiment.acting_roles(), key=lambda r: r.seat)
    single = len(seat_roles) == 1

    trajectories: list = []
    episode = None
    seed = None
    prev_obs: Optional[dict] = None
    steps: list = []

    for event in events:
        if event.kind == MessageKind.START_EPISODE.value:
            episode = event.payload["episode"]
            seed = episode_seed(header.master_seed, episode)
            steps = []
            prev_obs = None
        elif event.kind == MessageKind.OBSERVE_BROADCAST.value:
            prev_obs = event.payload["observations"]
        elif event.kind == MessageKind.STEP_BROADCAST.value:
            payload = event.payload
            if prev_obs is None:
                raise CorruptLog("StepBroadcast before ObserveBroadcast")
            if single:
                role = seat_roles[0].name
                step = TrajectoryStep(
                    observation=tuple(prev_obs[role]),
                    action=payload["actions"][role],
                    reward=tuple(payload["rewards"][role]),
                )
            else:
                step = TrajectoryStep(
                    observation=tuple(tuple(prev_obs[r.name]) for r in seat_roles),
                    action=tuple(payload["actions"][r.name] for r in seat_roles),
                    reward=tuple(payload["rewards"][seat_roles[0].name]),
                )
            steps.append(step)
            prev_obs = payload["observations"]
        elif event.kind == MessageKind.EPISODE_END.value:
            trajectories.append(Trajectory(env_id=experiment.env_id, seed=seed,
                                           steps=tuple(steps)))
            steps = []
    return trajectories


# ---------------------------------------------------------------------------
# Protocol trace verification: the recorded frame sequence, replayed through
# the documented state table, must never raise ProtocolViolation.

_WIRE_KINDS = {k.value for k in MessageKind}


def verify_protocol_trace(events: list) -> int:
    """Run the log's wire-visible frames through validate_transition from Lobby.

    Returns the number of frames checked; raises ProtocolViolation on any
    illegal (state, kind) pair, which would mean the server emitted or accepted
    a frame its own documented state machine forbids.
    """
    state = ProtocolState.LOBBY
    checked = 0

    humans_total = None
    humans_bound = 0
    pref_open = 0

    # Pre-scan per-tick barrier fills to mark the completing ActSubmit.
    fills: dict = {}
    for e in events:
        if e.kind in (MessageKind.ACT_SUBMIT.value, "TimeoutSubstitution"):
            fills.setdefault(e.tick, []).append(e.seq)

    for i, e in enumerate(events):
        if e.kind == "SessionCreated":
            experiment = parse_experiment(e.payload["experiment_toml"])
            humans_total = sum(1 for r in experiment.roles if r.controller_kind == "human")
            continue
        kind = e.kind
        resume = False
        if kind == "BindingResumed":
            kind = MessageKind.JOIN.value
            resume = True
        if kind not in _WIRE_KINDS:
            continue
        mk = MessageKind(kind)
        ctx_kwargs = {}
        if mk is MessageKind.JOIN and not resume:
            humans_bound += 1
            ctx_kwargs["joins_complete"] = humans_bound == humans_total
        if resume:
            ctx_kwargs["resume"] = True
        if mk is MessageKind.ACT_SUBMIT:
            ctx_kwargs["barrier_complete"] = e.seq == max(fills.get(e.tick, [e.seq]))
        if mk is MessageKind.STEP_BROADCAST:
            ctx_kwargs["episode_done"] = e.payload["terminated"] or e.payload["truncated"]
        if mk is MessageKind.PREF_QUERY:
            pref_open += 1
        if mk is MessageKind.PREF_RESPONSE:
            ctx_kwargs["pref_query_open"] = pref_open > 0
            pref_open -= 1
        probe = Envelope(session_id="trace", sender="server", kind=mk, payload={},
                         tick=None)
        state = validate_transition(state, probe, TransitionContext(**ctx_kwargs))
        checked += 1
    return checked
