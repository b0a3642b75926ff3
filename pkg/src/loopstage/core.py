"""Deterministic session kernel.

One SessionCore instance owns all state of a running experiment room. Every
externally-caused input (joins, action submissions, annotations, chat,
delegation, preference responses, timeout substitutions, episode starts,
paced tick advances, end requests) enters through an ext_* method that first
records the event and then mutates state; everything else (agent actions,
environment steps, learner updates, state hashes, preference queries) is
derived deterministically. The live server and the offline replayer drive the
same code path, which is what makes logs replayable bit-for-bit.

Wall-clock times never come from a clock in here: callers stamp them. During
replay the stamps come from the log, so time-dependent decisions (annotation
credit, learner-update maturity) replay exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .agents.builtin import QLearningAgent, SequenceAgent, make_agent
from .agents.pareto import enumerate_pareto_front, select_by_utility
from .agents.preferences import build_tabular_featurizer, fit_reward_model, pairs_from_ranking
from .agents.shaping import credit_tick, shape_reward
from .agents.trajectory import Trajectory, TrajectoryStep
from .config import ExperimentDef, experiment_hash, mint_completion_code, serialize_experiment
from .envs import make_env
from .events import canonical_json, state_digest
from .protocol import ControllerId, MessageKind, ProtocolState, TransitionContext, validate_transition
from .rng import SplitMix64, derive_seed


def episode_seed(master_seed: int, episode: int) -> int:
    label = "env" if episode == 0 else f"env:{episode}"
    return derive_seed(master_seed, label)


@dataclass
class Binding:
    role_name: str
    controller: Optional[ControllerId] = None
    token: Optional[str] = None
    participant_id: Optional[str] = None
    suspended: bool = False


@dataclass
class DelegationState:
    role: str
    default_controller: Optional[ControllerId]
    current_controller: Optional[ControllerId]
    since_tick: int = 0


@dataclass
class TickBarrier:
    tick: int
    required: frozenset
    received: set = field(default_factory=set)
    deadline_rel_ms: int = 0

    @property
    def complete(self) -> bool:
        return self.required <= self.received


@dataclass
class Outbound:
    target_type: str  # "broadcast" | "role" | "token"
    target: Optional[str]
    kind: MessageKind
    payload: dict
    tick: Optional[int] = None


@dataclass
class CoreResult:
    accepted: bool = True
    error: Optional[tuple] = None            # (code, message, field or None)
    logged: list = field(default_factory=list)    # (kind, tick, payload)
    outbound: list = field(default_factory=list)  # Outbound
    start_ready: bool = False                # caller should trigger StartEpisode now
    schedule_start_delay_ms: Optional[int] = None
    schedule_tick_delay_ms: Optional[int] = None
    barrier_deadline_rel_ms: Optional[int] = None  # set when a new barrier opened
    session_over: bool = False


class SessionError(Exception):
    def __init__(self, code: str, message: str, field_name: Optional[str] = None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.field = field_name


class SessionCore:
    def __init__(self, experiment: ExperimentDef, master_seed: int,
                 session_id: str, build_id: str):
        self.experiment = experiment
        self.master_seed = master_seed
        self.session_id = session_id
        self.build_id = build_id

        self.env = make_env(experiment.env_id, experiment.env_params)
        self.phase = ProtocolState.LOBBY
        self.tick = 0
        self.episode = 0

        self.bindings: dict = {}
        self.delegation: dict = {}
        for role in experiment.roles:
            binding = Binding(role_name=role.name)
            if role.controller_kind == "agent":
                binding.controller = ControllerId(role.name, "agent", 0)
            self.bindings[role.name] = binding
            self.delegation[role.name] = DelegationState(
                role=role.name, default_controller=binding.controller,
                current_controller=binding.controller)

        self.agents: dict = {}
        for role_name, agent_def in experiment.agents.items():
            seat = experiment.role(role_name).seat
            self.agents[role_name] = make_agent(
                agent_def.algorithm, self.env, seat if seat is not None else 0,
                agent_def.hyperparams)

        self._streams: dict = {}
        self._seat_roles = sorted(experiment.acting_roles(), key=lambda r: r.seat)

        self.barrier: Optional[TickBarrier] = None
        self.pending_actions: dict = {}
        self.pending_delegation: dict = {}          # role -> ControllerId | "default"

        self.current_obs: tuple = self.env.reset(episode_seed(master_seed, 0))
        self._episode_seed = episode_seed(master_seed, 0)
        self._episode_steps: list = []
        self._episode_frames: list = []
        self.trajectories: list = []
        self._trajectory_frames: list = []

        self.broadcast_times: dict = {}             # tick -> wall ms, current episode
        self.annotation_queue: dict = {}            # tick -> [(value, recv_ms)]
        self.pending_learner: list = []             # step records awaiting maturity

        self.reward_model = None
        self._pref_counter = 0
        self.open_queries: dict = {}                # query_id -> query state
        self.pref_pairs: list = []
        self._pref_issued = False
        self._pareto_front = None

        self.channel_transcripts: dict = {c.name: [] for c in experiment.channels}
        self.completion_codes: dict = {}
        self.last_wall_ms = 0

        self._log_buf: list = []
        self._out_buf: list = []

    # -- plumbing ---------------------------------------------------------

    def _stream(self, label: str) -> SplitMix64:
        if label not in self._streams:
            self._streams[label] = SplitMix64(derive_seed(self.master_seed, label))
        return self._streams[label]

    @property
    def rng_cursor(self) -> int:
        return sum(s.count for s in self._streams.values())

    def _log(self, kind: str, tick: Optional[int], payload: dict) -> None:
        self._log_buf.append((kind, tick, payload))

    def _send(self, target_type: str, target: Optional[str], kind: MessageKind,
              payload: dict, tick: Optional[int] = None) -> None:
        self._out_buf.append(Outbound(target_type=target_type, target=target,
                                      kind=kind, payload=payload, tick=tick))

    def _begin(self, wall_ms: int) -> None:
        self._log_buf = []
        self._out_buf = []
        self.last_wall_ms = max(self.last_wall_ms, wall_ms)

    def _result(self, **kwargs) -> CoreResult:
        return CoreResult(logged=self._log_buf, outbound=self._out_buf, **kwargs)

    def _reject(self, code: str, message: str, field_name: Optional[str] = None) -> CoreResult:
        return CoreResult(accepted=False, error=(code, message, field_name),
                          logged=[], outbound=[])

    def _transition(self, kind: MessageKind, ctx: TransitionContext = TransitionContext()) -> None:
        from .protocol import Envelope
        probe = Envelope(session_id=self.session_id, sender="server", kind=kind,
                         payload={}, tick=None)
        # Payload content is irrelevant to the state table; bypass payload checks
        # by consulting validate_transition directly.
        self.phase = validate_transition(self.phase, probe, ctx)

    # -- state hashing ----------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "env": self.env.state_dict(),
            "learners": {name: agent.state_dict() for name, agent in sorted(self.agents.items())},
            "reward_model": self.reward_model.state_dict() if self.reward_model else None,
            "rng_cursor": self.rng_cursor,
            "streams": {label: s.count for label, s in sorted(self._streams.items())},
            "tick": self.tick,
            "episode": self.episode,
            "pending_learner": self.pending_learner,
            "annotation_queue": {str(t): v for t, v in sorted(self.annotation_queue.items())},
        }

    def state_hash(self) -> int:
        return state_digest(self.state_dict())

    # -- role/controller resolution ----------------------------------------

    def effective_controller(self, role_name: str) -> Optional[ControllerId]:
        return self.delegation[role_name].current_controller

    def _controller_token(self, controller: ControllerId) -> Optional[str]:
        return self.bindings[controller.role_name].token

    def _required_roles(self) -> frozenset:
        names = set()
        for role in self._seat_roles:
            ctrl = self.effective_controller(role.name)
            if ctrl is not None and ctrl.controller_kind == "human":
                names.add(role.name)
        return frozenset(names)

    def _human_vacancies(self) -> list:
        return sorted(b.role_name for b in self.bindings.values()
                      if self.experiment.role(b.role_name).controller_kind == "human"
                      and b.controller is None)

    def _bound_humans(self) -> list:
        return sorted(b.role_name for b in self.bindings.values()
                      if b.controller is not None and b.controller.controller_kind == "human")

    # -- bootstrap ----------------------------------------------------------

    def bootstrap(self, wall_ms: int) -> CoreResult:
        """Record SessionCreated; must be called exactly once before anything else."""
        self._begin(wall_ms)
        self._log("SessionCreated", None, {
            "experiment_hash": experiment_hash(self.experiment),
            "experiment_toml": serialize_experiment(self.experiment),
            "master_seed": self.master_seed,
            "initial_state_digest": self.state_hash(),
        })
        start_ready = not self._human_vacancies()
        if start_ready:
            self.phase = ProtocolState.BETWEEN_EPISODES
        return self._result(start_ready=start_ready)

    # -- joins and resumes ---------------------------------------------------

    def validate_join(self, token: str, study_id: str, participant_id: str,
                      requested_role: Optional[str]) -> tuple:
        """(role_name, resume) or SessionError."""
        if study_id != self.experiment.study_id:
            raise SessionError("UnknownToken", f"token not valid for study {study_id!r}")
        for b in self.bindings.values():
            if b.token == token:
                return b.role_name, True
        if self.phase not in (ProtocolState.LOBBY, ProtocolState.ASSIGNED):
            raise SessionError("SessionFull", "session already started")
        vacancies = self._human_vacancies()
        if not vacancies:
            raise SessionError("SessionFull", "no vacant human roles")
        if requested_role is not None:
            role = requested_role
            if role not in self.bindings:
                raise SessionError("RoleTaken", f"no such role {role!r}", "requested_role")
            if role not in vacancies:
                raise SessionError("RoleTaken", f"role {role!r} is not vacant", "requested_role")
        else:
            role = vacancies[0]
        return role, False

    def ext_join(self, payload: dict, wall_ms: int) -> CoreResult:
        """payload: {role, token, participant_id, study_id}; validated upstream."""
        self._begin(wall_ms)
        role_name = payload["role"]
        self._log(MessageKind.JOIN.value, None, payload)
        binding = self.bindings[role_name]
        binding.controller = ControllerId(role_name, "human", 0)
        binding.token = payload["token"]
        binding.participant_id = payload["participant_id"]
        deleg = self.delegation[role_name]
        if deleg.default_controller is None:
            deleg.default_controller = binding.controller
            deleg.current_controller = binding.controller
        joins_complete = not self._human_vacancies()
        self._transition(MessageKind.JOIN, TransitionContext(joins_complete=joins_complete))
        role = self.experiment.role(role_name)
        assign_payload = {
            "role": role_name,
            "controller_kind": "human",
            "instance": 0,
            "widgets": list(role.widgets),
            "study_id": self.experiment.study_id,
            "episodes": self.experiment.episodes,
            # UI context: per-seat action arities, sendable channels, and the
            # agent roles a delegation toggle can target.
            "action_arities": {r.name: self.env.capabilities.action_spaces[r.seat].n
                               for r in self._seat_roles},
            "channels": [
                {"name": c.name,
                 "alphabet": list(c.alphabet) if c.alphabet is not None else None,
                 "max_len": c.max_len}
                for c in self.experiment.channels if role_name in c.senders
            ],
            "agent_roles": [r.name for r in self.experiment.roles
                            if r.controller_kind == "agent"],
        }
        self._log(MessageKind.ROLE_ASSIGN.value, None, assign_payload)
        self._send("token", binding.token, MessageKind.JOIN_ACK, {"resumed": False})
        self._send("token", binding.token, MessageKind.ROLE_ASSIGN, assign_payload)
        return self._result(start_ready=joins_complete)

    def resume_snapshot(self) -> dict:
        frame = self.env.render().to_json() if self.phase not in (
            ProtocolState.LOBBY, ProtocolState.ASSIGNED) else None
        snap = {
            "tick": self.tick,
            "phase": self.phase.value,
            "episode": self.episode,
            "observations": self._obs_payload(),
        }
        if frame is not None:
            snap["render"] = frame
        if self.barrier is not None and not self.barrier.complete:
            snap["awaiting_roles"] = sorted(self.barrier.required - self.barrier.received)
        return snap

    def ext_binding_resumed(self, payload: dict, wall_ms: int) -> CoreResult:
        self._begin(wall_ms)
        role_name = payload["role"]
        self._log("BindingResumed", None, payload)
        binding = self.bindings[role_name]
        binding.suspended = False
        self._send("token", binding.token, MessageKind.JOIN_ACK,
                   {"resumed": True, "snapshot": self.resume_snapshot()})
        return self._result()

    def ext_binding_suspended(self, payload: dict, wall_ms: int) -> CoreResult:
        self._begin(wall_ms)
        self._log("BindingSuspended", None, payload)
        self.bindings[payload["role"]].suspended = True
        return self._result()

    # -- episode lifecycle ----------------------------------------------------

    def ext_start_episode(self, payload: dict, wall_ms: int) -> CoreResult:
        self._begin(wall_ms)
        episode = payload["episode"]
        self._log(MessageKind.START_EPISODE.value, None, payload)
        self._transition(MessageKind.START_EPISODE)
        self._episode_seed = episode_seed(self.master_seed, episode)
        self.current_obs = self.env.reset(self._episode_seed)
        self._episode_steps = []
        self._episode_frames = []
        self.broadcast_times = {}
        for agent in self.agents.values():
            if isinstance(agent, SequenceAgent):
                agent.reset_cursor()
        self._send("broadcast", None, MessageKind.START_EPISODE, {"episode": episode})
        obs_payload = {"episode": episode, "observations": self._obs_payload()}
        self._log(MessageKind.OBSERVE_BROADCAST.value, None, obs_payload)
        self._send("broadcast", None, MessageKind.OBSERVE_BROADCAST,
                   {**obs_payload, "render": self.env.render().to_json()})
        auto = self._enter_awaiting(wall_ms)
        return self._finish_cycle(auto, wall_ms)

    def _obs_payload(self) -> dict:
        return {role.name: list(self.current_obs[role.seat]) for role in self._seat_roles}

    def _enter_awaiting(self, wall_ms: int) -> bool:
        """Open the barrier for the current tick. True means step immediately."""
        for role_name, target in sorted(self.pending_delegation.items()):
            deleg = self.delegation[role_name]
            new = deleg.default_controller if target == "default" else target
            deleg.current_controller = new
            deleg.since_tick = self.tick
        self.pending_delegation = {}

        self.pending_actions = {}
        # Built-in agents act synchronously before the barrier is evaluated.
        for role in self._seat_roles:
            ctrl = self.effective_controller(role.name)
            if ctrl is None or ctrl.controller_kind != "agent":
                continue
            agent = self.agents[ctrl.role_name]
            obs = self.current_obs[role.seat]
            action = agent.act(obs, self._stream(f"agent:{ctrl.role_name}"))
            self.pending_actions[role.name] = action
            self._log("AgentAction", self.tick,
                      {"role": role.name, "controller_role": ctrl.role_name, "action": action})
            if agent.wants_delegation(obs) and self._bound_humans():
                self._send("broadcast", None, MessageKind.DELEGATION_REQUEST,
                           {"role": role.name, "target_kind": "human"}, tick=self.tick)

        required = self._required_roles()
        deadline = max((self.experiment.role(r).action_deadline_ms for r in required),
                       default=0)
        self.barrier = TickBarrier(tick=self.tick, required=required,
                                   received=set(), deadline_rel_ms=deadline)
        if not required:
            return True  # caller steps now (or schedules a paced TickAdvance)
        self._send("broadcast", None, MessageKind.ACT_REQUEST,
                   {"tick": self.tick, "roles": sorted(required),
                    "deadline_ms": self.last_wall_ms + deadline})
        return False

    def _finish_cycle(self, auto_step: bool, wall_ms: int) -> CoreResult:
        """Run chained auto-advances, then assemble hints for the live loop."""
        pace = self.experiment.tick_interval_ms
        while auto_step:
            if pace > 0:
                return self._result(schedule_tick_delay_ms=pace)
            auto_step = self._execute_step(wall_ms)
        if self.phase is ProtocolState.ENDED:
            return self._result(session_over=True)
        if self.phase is ProtocolState.BETWEEN_EPISODES and self.episode < self.experiment.episodes:
            return self._result(schedule_start_delay_ms=self.experiment.inter_episode_pause_ms)
        if self.barrier is not None and self.barrier.required and not self.barrier.complete:
            return self._result(barrier_deadline_rel_ms=self.barrier.deadline_rel_ms)
        return self._result()

    def ext_tick_advance(self, payload: dict, wall_ms: int) -> CoreResult:
        """Paced auto-step for ticks no human needs to act in."""
        self._begin(wall_ms)
        self._log("TickAdvance", self.tick, payload)
        if self.phase is not ProtocolState.AWAITING_ACTIONS or self.barrier is None \
                or self.barrier.required:
            return self._result()
        auto = self._execute_step(wall_ms)
        return self._finish_cycle(auto, wall_ms)

    # -- the lockstep barrier ---------------------------------------------------

    def validate_act_submit(self, token: str, tick: Optional[int],
                            action, role_hint: Optional[str]) -> str:
        if self.phase is not ProtocolState.AWAITING_ACTIONS or self.barrier is None:
            raise SessionError("NotYourTurn", f"no actions accepted in phase {self.phase.value}")
        if tick != self.barrier.tick:
            raise SessionError("StaleTick",
                               f"submitted tick {tick}, current {self.barrier.tick}", "tick")
        eligible = []
        for role_name in sorted(self.barrier.required):
            ctrl = self.effective_controller(role_name)
            if ctrl is not None and self._controller_token(ctrl) == token:
                eligible.append(role_name)
        if role_hint is not None:
            eligible = [r for r in eligible if r == role_hint]
        if not eligible:
            raise SessionError("NotYourTurn", "sender controls no role awaiting an action",
                               "role")
        open_roles = [r for r in eligible if r not in self.barrier.received]
        if not open_roles:
            raise SessionError("Duplicate",
                               f"action for {eligible[0]!r} already submitted this tick")
        role_name = open_roles[0]
        seat = self.experiment.role(role_name).seat
        if not self.env.capabilities.action_spaces[seat].contains(action):
            raise SessionError("SpaceViolation", f"action {action!r} outside space", "action")
        return role_name

    def ext_act_submit(self, payload: dict, tick: int, wall_ms: int) -> CoreResult:
        """payload: {role, action}; validated upstream (first write wins)."""
        self._begin(wall_ms)
        self._flush_matured(wall_ms)
        self._log(MessageKind.ACT_SUBMIT.value, tick, payload)
        role_name = payload["role"]
        self.pending_actions[role_name] = payload["action"]
        self.barrier.received.add(role_name)
        complete = self.barrier.complete
        self._transition(MessageKind.ACT_SUBMIT, TransitionContext(barrier_complete=complete))
        auto = self._execute_step(wall_ms) if complete else False
        return self._finish_cycle(auto, wall_ms)

    def ext_timeout_substitution(self, payload: dict, wall_ms: int) -> CoreResult:
        """payload: {role, action}; the live loop fires these at the deadline."""
        self._begin(wall_ms)
        self._flush_matured(wall_ms)
        self._log("TimeoutSubstitution", self.barrier.tick if self.barrier else self.tick,
                  payload)
        role_name = payload["role"]
        self.pending_actions[role_name] = payload["action"]
        if self.barrier is not None:
            self.barrier.received.add(role_name)
            if self.barrier.complete:
                auto = self._execute_step(wall_ms)
                return self._finish_cycle(auto, wall_ms)
        return self._finish_cycle(False, wall_ms)

    def missing_roles(self) -> list:
        if self.barrier is None:
            return []
        return sorted(self.barrier.required - self.barrier.received)

    def _execute_step(self, wall_ms: int) -> bool:
        """One environment step. Returns True when the next tick should
        auto-advance (no human action required)."""
        self._flush_matured(wall_ms)
        self.phase = ProtocolState.IN_EPISODE
        joint = tuple(self.pending_actions[role.name] for role in self._seat_roles)
        obs_before = self.current_obs
        outcome = self.env.step(joint)
        self.current_obs = outcome.observations
        tick = self.tick
        self.broadcast_times[tick] = wall_ms

        actions_by_role = {role.name: self.pending_actions[role.name]
                           for role in self._seat_roles}
        rewards_by_role = {role.name: list(outcome.rewards[role.seat])
                           for role in self._seat_roles}
        step_payload = {
            "observations": {role.name: list(outcome.observations[role.seat])
                             for role in self._seat_roles},
            "actions": actions_by_role,
            "rewards": rewards_by_role,
            "terminated": outcome.terminated,
            "truncated": outcome.truncated,
            "info": outcome.info,
        }
        self._log(MessageKind.STEP_BROADCAST.value, tick, step_payload)
        render = self.env.render().to_json()
        self._send("broadcast", None, MessageKind.STEP_BROADCAST,
                   {**step_payload, "render": render}, tick=tick)

        # Trajectory bookkeeping (seat 0 view for single seat, joint otherwise).
        if len(self._seat_roles) == 1:
            step = TrajectoryStep(observation=tuple(obs_before[0]), action=joint[0],
                                  reward=tuple(outcome.rewards[0]))
        else:
            step = TrajectoryStep(observation=tuple(tuple(o) for o in obs_before),
                                  action=joint, reward=tuple(outcome.rewards[0]))
        self._episode_steps.append(step)
        self._episode_frames.append(render)

        # Queue learner updates; they mature once the annotation window passes.
        records = []
        for role in self._seat_roles:
            binding_role = self.experiment.role(role.name)
            owner = binding_role.name if binding_role.controller_kind == "agent" else None
            if owner is None or owner not in self.agents:
                continue
            agent = self.agents[owner]
            if not isinstance(agent, QLearningAgent):
                continue
            records.append({
                "role": owner,
                "obs": list(obs_before[role.seat]),
                "action": joint[role.seat],
                "reward": agent.scalarize_reward(outcome.rewards[role.seat]),
                "obs_next": list(outcome.observations[role.seat]),
                "terminal": outcome.terminated,
            })
        if records:
            self.pending_learner.append({"tick": tick, "broadcast_ms": wall_ms,
                                         "records": records})
        if not (self.experiment.annotation.enabled and self.experiment.annotation.window_ms > 0):
            self._flush_all()

        done = outcome.terminated or outcome.truncated
        ctx = TransitionContext(episode_done=done)
        self._transition(MessageKind.STEP_BROADCAST, ctx)

        if done:
            self._flush_all()
            traj = Trajectory(env_id=self.experiment.env_id, seed=self._episode_seed,
                              steps=tuple(self._episode_steps))
            self.trajectories.append(traj)
            self._trajectory_frames.append(list(self._episode_frames))
            returns = {role.name: [sum(s.reward[d] for s in traj.steps)
                                   for d in range(self.env.capabilities.reward_dims)]
                       for role in self._seat_roles}
            end_payload = {"episode": self.episode, "terminated": outcome.terminated,
                           "truncated": outcome.truncated, "returns": returns}
            self._log(MessageKind.EPISODE_END.value, None, end_payload)
            self._send("broadcast", None, MessageKind.EPISODE_END, end_payload)
            self._transition(MessageKind.EPISODE_END)
            self._log_state_hash(tick)
            self.tick = tick + 1
            self.episode += 1
            self._maybe_issue_pref_query(wall_ms)
            if self.episode >= self.experiment.episodes:
                self._end_session("completed", wall_ms)
            return False

        self._log_state_hash(tick)
        self.tick = tick + 1
        return self._enter_awaiting(wall_ms)

    def _log_state_hash(self, tick: int) -> None:
        self._log("StateHash", tick, {"digest": self.state_hash()})

    # -- learner maturity and annotation credit ------------------------------

    def _flush_matured(self, wall_ms: int) -> None:
        window = self.experiment.annotation.window_ms
        while self.pending_learner:
            head = self.pending_learner[0]
            if head["broadcast_ms"] + window < wall_ms:
                self._apply_learner_record(self.pending_learner.pop(0))
            else:
                break

    def _flush_all(self) -> None:
        while self.pending_learner:
            self._apply_learner_record(self.pending_learner.pop(0))

    def _apply_learner_record(self, entry: dict) -> None:
        tick = entry["tick"]
        annotations = self.annotation_queue.pop(tick, [])
        ann = self.experiment.annotation
        latencies = [(v, recv - entry["broadcast_ms"]) for v, recv in annotations]
        for rec in entry["records"]:
            reward = rec["reward"]
            if ann.enabled:
                reward = shape_reward(reward, latencies, ann.beta, ann.window_ms)
            agent = self.agents[rec["role"]]
            agent.learn(tuple(rec["obs"]), rec["action"], reward,
                        tuple(rec["obs_next"]), rec["terminal"])
            self._log("LearnerUpdate", tick,
                      {"role": rec["role"], "reward": reward,
                       "annotations": len(latencies)})

    def validate_annotation(self, token: str) -> str:
        role_name = self._role_of_token(token)
        role = self.experiment.role(role_name)
        if "reward_buttons" not in role.widgets:
            raise SessionError("NotYourTurn", "role has no annotation widget")
        return role_name

    def ext_reward_annotation(self, payload: dict, tick: Optional[int],
                              wall_ms: int) -> CoreResult:
        """payload: {role, value}; crediting is recomputed from wall times."""
        self._begin(wall_ms)
        self._flush_matured(wall_ms)
        credited = credit_tick(self.broadcast_times, wall_ms,
                               self.experiment.annotation.window_ms)
        self._log(MessageKind.REWARD_ANNOTATION.value, tick,
                  {**payload, "credited_tick": credited})
        if credited is not None and self.experiment.annotation.enabled:
            self.annotation_queue.setdefault(credited, []).append(
                (payload["value"], wall_ms))
        return self._result()

    def _role_of_token(self, token: str) -> str:
        for b in self.bindings.values():
            if b.token == token:
                return b.role_name
        raise SessionError("UnknownToken", "token not bound to any role")

    # -- channels ----------------------------------------------------------------

    def validate_channel_msg(self, token: str, channel: str, content: str) -> str:
        role_name = self._role_of_token(token)
        try:
            ch = self.experiment.channel(channel)
        except KeyError:
            raise SessionError("ChannelViolation", f"channel {channel!r} not declared",
                               "channel") from None
        if role_name not in ch.senders:
            raise SessionError("ChannelViolation",
                               f"role {role_name!r} may not send on {channel!r}", "channel")
        if len(content) > ch.max_len:
            raise SessionError("ChannelViolation",
                               f"content exceeds max length {ch.max_len}", "content")
        if not ch.free_text and content not in ch.alphabet:
            raise SessionError("ChannelViolation",
                               f"content must be one symbol of {list(ch.alphabet)}", "content")
        return role_name

    def ext_channel_msg(self, payload: dict, tick: Optional[int], wall_ms: int) -> CoreResult:
        """payload: {role, channel, content}; validated upstream."""
        self._begin(wall_ms)
        self._log(MessageKind.CHANNEL_MSG.value, tick, payload)
        ch = self.experiment.channel(payload["channel"])
        self.channel_transcripts[ch.name].append(
            {"from": payload["role"], "content": payload["content"], "wall_ms": wall_ms})
        wire = {"channel": payload["channel"], "content": payload["content"]}
        for receiver in ch.receivers:
            binding = self.bindings[receiver]
            if binding.token is not None:
                self._send("token", binding.token, MessageKind.CHANNEL_MSG, wire, tick=tick)
        return self._result()

    # -- delegation -----------------------------------------------------------------

    def resolve_delegation_target(self, role_name: str, target_kind: str) -> ControllerId:
        if role_name not in self.bindings:
            raise SessionError("NoSuchRole", f"no role {role_name!r}", "role")
        current = self.effective_controller(role_name)
        candidates = []
        for b in sorted(self.bindings.values(), key=lambda b: b.role_name):
            if b.controller is not None and b.controller.controller_kind == target_kind \
                    and b.controller != current:
                candidates.append(b.controller)
        if not candidates:
            raise SessionError("TargetUnbound", f"no bound {target_kind} controller")
        return candidates[0]

    def ext_delegation_request(self, payload: dict, tick: Optional[int],
                               wall_ms: int) -> CoreResult:
        self._begin(wall_ms)
        self._log(MessageKind.DELEGATION_REQUEST.value, tick, payload)
        self._send("broadcast", None, MessageKind.DELEGATION_REQUEST,
                   {"role": payload["role"], "target_kind": payload["target_kind"]},
                   tick=tick)
        return self._result()

    def ext_delegation_grant(self, payload: dict, tick: Optional[int],
                             wall_ms: int) -> CoreResult:
        """payload: {role, target_kind, target: {role, kind, instance}}."""
        self._begin(wall_ms)
        self._log(MessageKind.DELEGATION_GRANT.value, tick, payload)
        target = ControllerId(payload["target"]["role"], payload["target"]["kind"],
                              payload["target"]["instance"])
        self.pending_delegation[payload["role"]] = target
        self._transition(MessageKind.DELEGATION_GRANT)
        self._send("broadcast", None, MessageKind.DELEGATION_GRANT,
                   {"role": payload["role"], "target_kind": payload["target_kind"]},
                   tick=tick)
        return self._result()

    def ext_delegation_revoke(self, payload: dict, wall_ms: int) -> CoreResult:
        self._begin(wall_ms)
        self._log(MessageKind.DELEGATION_REVOKE.value, None, payload)
        self.pending_delegation[payload["role"]] = "default"
        self._transition(MessageKind.DELEGATION_REVOKE)
        self._send("broadcast", None, MessageKind.DELEGATION_REVOKE,
                   {"role": payload["role"]})
        return self._result()

    # -- preference elicitation --------------------------------------------------------

    def _maybe_issue_pref_query(self, wall_ms: int) -> None:
        prefs = self.experiment.preferences
        if not prefs.enabled or self._pref_issued:
            return
        if self.episode < prefs.after_episode:
            return
        items = self._build_pref_items()
        if len(items) < 2:
            return
        self._pref_issued = True
        self._pref_counter += 1
        query_id = f"q{self._pref_counter}"
        target = prefs.target_role
        if target is None:
            humans = [r.name for r in self.experiment.human_roles()]
            target = humans[0] if humans else None
        if target is None:
            return
        self.open_queries[query_id] = {
            "items": items,
            "target_role": target,
        }
        slim = [{"item_id": it["item_id"], "returns": it["returns"],
                 "length": it["length"]} for it in items]
        self._log(MessageKind.PREF_QUERY.value, None,
                  {"query_id": query_id, "items": slim, "target_role": target})
        full = [{"item_id": it["item_id"], "returns": it["returns"],
                 "length": it["length"], "frames": it["frames"]} for it in items]
        binding = self.bindings[target]
        if binding.token is not None:
            self._send("token", binding.token, MessageKind.PREF_QUERY,
                       {"query_id": query_id, "items": full})

    def _build_pref_items(self) -> list:
        prefs = self.experiment.preferences
        items = []
        if prefs.source == "pareto":
            front = self._ensure_pareto_front()
            n = len(front.entries)
            want = min(prefs.items, n)
            if want < 1:
                return []
            idxs = sorted({round(k * (n - 1) / max(want - 1, 1)) for k in range(want)})
            for i, idx in enumerate(idxs):
                entry = front.entries[idx]
                traj, frames = self._trajectory_of_actions(entry.actions)
                items.append({
                    "item_id": f"pareto-{idx}",
                    "returns": list(entry.returns),
                    "length": len(entry.actions),
                    "actions": list(entry.actions),
                    "trajectory": traj,
                    "frames": frames,
                })
        else:
            recent = list(zip(self.trajectories, self._trajectory_frames))[-prefs.items:]
            for i, (traj, frames) in enumerate(recent):
                items.append({
                    "item_id": f"ep-{len(self.trajectories) - len(recent) + i}",
                    "returns": list(traj.total_return),
                    "length": len(traj.steps),
                    "actions": [s.action for s in traj.steps],
                    "trajectory": traj,
                    "frames": frames,
                })
        return items

    def _ensure_pareto_front(self):
        if self._pareto_front is None:
            probe = make_env(self.experiment.env_id, self.experiment.env_params)
            self._pareto_front = enumerate_pareto_front(
                probe, horizon=self.experiment.preferences.horizon,
                seed=derive_seed(self.master_seed, "pareto"))
        return self._pareto_front

    def _trajectory_of_actions(self, actions: tuple) -> tuple:
        probe = make_env(self.experiment.env_id, self.experiment.env_params)
        (prev,) = probe.reset(derive_seed(self.master_seed, "pareto"))
        steps, frames = [], []
        for a in actions:
            outcome = probe.step((a,))
            steps.append(TrajectoryStep(observation=tuple(prev), action=a,
                                        reward=tuple(outcome.rewards[0])))
            frames.append(probe.render().to_json())
            prev = outcome.observations[0]
            if outcome.terminated or outcome.truncated:
                break
        traj = Trajectory(env_id=self.experiment.env_id,
                          seed=derive_seed(self.master_seed, "pareto"),
                          steps=tuple(steps))
        return traj, frames

    def validate_pref_response(self, token: str, query_id: str, ranking: list) -> str:
        role_name = self._role_of_token(token)
        if query_id not in self.open_queries:
            raise SessionError("UnknownQuery", f"no open query {query_id!r}", "query_id")
        query = self.open_queries[query_id]
        if query["target_role"] != role_name:
            raise SessionError("UnknownQuery", "query was not addressed to this role")
        ids = [it["item_id"] for it in query["items"]]
        if sorted(ranking) != sorted(ids):
            raise SessionError("InvalidRanking",
                               "ranking must be a permutation of the item ids", "ranking")
        return role_name

    def ext_pref_response(self, payload: dict, wall_ms: int) -> CoreResult:
        """payload: {role, query_id, ranking}; validated upstream."""
        self._begin(wall_ms)
        self._log(MessageKind.PREF_RESPONSE.value, None, payload)
        query = self.open_queries.pop(payload["query_id"])
        by_id = {it["item_id"]: it for it in query["items"]}
        ranked = [by_id[i] for i in payload["ranking"]]
        pairs = pairs_from_ranking([(it["item_id"], it["trajectory"]) for it in query["items"]],
                                   payload["ranking"])
        self.pref_pairs.extend(pairs)
        prefs = self.experiment.preferences
        if prefs.fit_reward_model and self.pref_pairs:
            trajs = [t for pair in self.pref_pairs for t in pair[:2]]
            featurizer, dim = build_tabular_featurizer(trajs)
            self.reward_model = fit_reward_model(
                self.pref_pairs, featurizer, dim,
                steps=prefs.fit_steps, learning_rate=prefs.fit_learning_rate)
            self._log("LearnerUpdate", None,
                      {"role": payload["role"], "reward_model_dim": dim,
                       "pairs": len(self.pref_pairs)})
        # A pareto follower adopts the top-ranked policy from the next episode on.
        top = ranked[0]
        if "actions" in top:
            for agent in self.agents.values():
                if isinstance(agent, SequenceAgent):
                    agent.set_sequence(tuple(top["actions"]))
                    self._log("LearnerUpdate", None,
                              {"role": payload["role"], "adopted_item": top["item_id"]})
        return self._result()

    # -- session end ----------------------------------------------------------------------

    def ext_end_requested(self, payload: dict, wall_ms: int) -> CoreResult:
        self._begin(wall_ms)
        self._log("EndRequested", None, payload)
        if self.phase is not ProtocolState.ENDED:
            self._end_session(payload.get("reason", "requested"), wall_ms)
        return self._result(session_over=True)

    def _end_session(self, reason: str, wall_ms: int) -> None:
        secret = self.experiment.recruitment.completion_secret
        codes = {}
        for b in self.bindings.values():
            if b.participant_id is not None and secret:
                codes[b.role_name] = mint_completion_code(
                    self.experiment.study_id, b.participant_id, secret)
        self.completion_codes = codes
        self._log(MessageKind.SESSION_END.value, None,
                  {"reason": reason, "completion_codes": codes})
        for b in self.bindings.values():
            if b.token is None:
                continue
            payload = {"reason": reason}
            if b.role_name in codes:
                payload["completion_code"] = codes[b.role_name]
            self._send("token", b.token, MessageKind.SESSION_END, payload)
        self._transition(MessageKind.SESSION_END)
        self.barrier = None

    # -- status ------------------------------------------------------------------------------

    def status(self) -> dict:
        return {
            "session_id": self.session_id,
            "phase": self.phase.value,
            "tick": self.tick,
            "episode": self.episode,
            "roles": {
                b.role_name: {
                    "controller_kind": (b.controller.controller_kind
                                        if b.controller else None),
                    "bound": b.controller is not None,
                    "suspended": b.suspended,
                }
                for b in sorted(self.bindings.values(), key=lambda b: b.role_name)
            },
            "awaiting": self.missing_roles(),
        }
