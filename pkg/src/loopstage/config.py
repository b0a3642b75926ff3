"""Declarative experiment definitions, condition assignment, recruitment codes.

Experiments are single TOML files. parse_experiment collects every violation
(path-qualified) instead of stopping at the first; serialize_experiment emits
a canonical form such that parse(serialize(d)) == d. The schema is documented
in docs/experiment.md alongside the shipped fixtures.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import tomli

from .agents.builtin import ALGORITHMS
from .envs import UnknownEnvironment, make_env

WIDGETS = ("action_pad", "reward_buttons", "chat", "ranking_view",
           "delegation_toggle", "intention_display")

DEFAULT_EPISODES = 10
DEFAULT_PAUSE_MS = 5000
DEFAULT_MAX_SESSION_MINUTES = 60
DEFAULT_DEADLINE_MS = 10_000


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, violations: list):
        super().__init__("; ".join(violations))
        self.violations = violations


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RoleDef:
    name: str
    controller_kind: str                   # "human" | "agent"
    seat: "int | None" = None              # env controller index; None = non-acting
    default_action: "int | None" = None    # substituted on timeout
    action_deadline_ms: int = DEFAULT_DEADLINE_MS
    widgets: tuple = ()


@dataclass(frozen=True)
class AgentDef:
    algorithm: str
    hyperparams: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ChannelDef:
    name: str
    senders: tuple
    receivers: tuple
    alphabet: "tuple | None" = None        # None means free text
    max_len: int = 280

    @property
    def free_text(self) -> bool:
        return self.alphabet is None


@dataclass(frozen=True)
class AnnotationCfg:
    enabled: bool = False
    beta: float = 0.5
    window_ms: int = 1500


@dataclass(frozen=True)
class PreferenceCfg:
    enabled: bool = False
    source: str = "recent"                 # "recent" | "pareto"
    items: int = 3
    after_episode: int = 1                 # issue once this many episodes completed
    fit_reward_model: bool = False
    target_role: "str | None" = None       # None: first bound human
    horizon: int = 25                      # pareto source only
    fit_steps: int = 200
    fit_learning_rate: float = 0.5


@dataclass(frozen=True)
class RecruitmentBinding:
    entry_params: tuple = ("pid",)
    completion_secret: str = ""
    redirect_template: str = ""


@dataclass(frozen=True)
class ExperimentDef:
    study_id: str
    env_id: str
    env_params: dict
    roles: tuple
    agents: dict                            # role name -> AgentDef
    channels: tuple = ()
    annotation: AnnotationCfg = AnnotationCfg()
    preferences: PreferenceCfg = PreferenceCfg()
    episodes: int = DEFAULT_EPISODES
    inter_episode_pause_ms: int = DEFAULT_PAUSE_MS
    max_session_minutes: int = DEFAULT_MAX_SESSION_MINUTES
    tick_interval_ms: int = 0
    conditions: dict = field(default_factory=dict)  # name -> {dotted key: value}
    recruitment: RecruitmentBinding = RecruitmentBinding()

    def role(self, name: str) -> RoleDef:
        for r in self.roles:
            if r.name == name:
                return r
        raise KeyError(name)

    def human_roles(self) -> list:
        return [r for r in self.roles if r.controller_kind == "human"]

    def acting_roles(self) -> list:
        return [r for r in self.roles if r.seat is not None]

    def channel(self, name: str) -> ChannelDef:
        for c in self.channels:
            if c.name == name:
                return c
        raise KeyError(name)


# ---------------------------------------------------------------------------
# Parsing

def _get(table: dict, key: str, default=None):
    return table[key] if key in table else default


def parse_experiment(text: str) -> ExperimentDef:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError(f"config is not valid TOML: {exc}") from None
    violations: list = []

    def need(table, key, path, types, default=None):
        if key not in table:
            if default is not None:
                return default
            violations.append(f"{path}.{key} is required")
            return None
        v = table[key]
        if not isinstance(v, types) or isinstance(v, bool) and types is int:
            violations.append(f"{path}.{key} has wrong type")
            return None
        return v

    study_id = need(raw, "study_id", "config", str)
    env_table = raw.get("env")
    env_id, env_params, env = None, {}, None
    if not isinstance(env_table, dict):
        violations.append("env table is required")
    else:
        env_id = need(env_table, "id", "env", str)
        env_params = {k: v for k, v in env_table.items() if k != "id"}
        if env_id:
            try:
                env = make_env(env_id, env_params)
            except UnknownEnvironment:
                violations.append(f"env.id {env_id!r} is not a known environment")
            except (KeyError, TypeError, ValueError) as exc:
                violations.append(f"env parameters invalid: {exc}")

    roles: list = []
    raw_roles = raw.get("roles", [])
    if not isinstance(raw_roles, list) or not raw_roles:
        violations.append("at least one [[roles]] entry is required")
        raw_roles = []
    names_seen = set()
    for i, rt in enumerate(raw_roles):
        path = f"roles[{i}]"
        name = need(rt, "name", path, str) or f"role{i}"
        if name in names_seen:
            violations.append(f"{path}.name duplicates role {name!r}")
        names_seen.add(name)
        kind = need(rt, "controller", path, str)
        if kind not in ("human", "agent"):
            violations.append(f"{path}.controller must be 'human' or 'agent'")
            kind = "human"
        seat = rt.get("seat")
        if seat is not None and (not isinstance(seat, int) or isinstance(seat, bool) or seat < 0):
            violations.append(f"{path}.seat must be a non-negative integer")
            seat = None
        default_action = rt.get("default_action")
        widgets = tuple(rt.get("widgets", ()))
        for w in widgets:
            if w not in WIDGETS:
                violations.append(f"{path}.widgets contains unknown widget {w!r}")
        roles.append(RoleDef(
            name=name, controller_kind=kind, seat=seat,
            default_action=default_action,
            action_deadline_ms=int(rt.get("action_deadline_ms", DEFAULT_DEADLINE_MS)),
            widgets=widgets,
        ))

    agents: dict = {}
    for role_name, at in raw.get("agents", {}).items():
        path = f"agents.{role_name}"
        if role_name not in names_seen:
            violations.append(f"{path} does not match any declared role")
            continue
        algorithm = need(at, "algorithm", path, str)
        if algorithm and algorithm not in ALGORITHMS:
            violations.append(f"{path}.algorithm {algorithm!r} is not available")
        hyper = {k: v for k, v in at.items() if k != "algorithm"}
        agents[role_name] = AgentDef(algorithm=algorithm or "", hyperparams=hyper)

    for r in roles:
        if r.controller_kind == "agent" and r.name not in agents:
            violations.append(f"roles[{r.name}] is an agent role but has no [agents.{r.name}] entry")

    # Seats must cover the environment's controllers exactly once.
    if env is not None:
        n = env.capabilities.num_controllers
        seats = [r.seat for r in roles if r.seat is not None]
        if sorted(seats) != list(range(n)):
            violations.append(
                f"roles must cover env seats 0..{n - 1} exactly once, got {sorted(seats)}")
        for r in roles:
            if r.seat is not None and r.seat < n:
                arity = env.capabilities.action_spaces[r.seat].n
                if r.default_action is None:
                    violations.append(f"roles[{r.name}].default_action is required for seated roles")
                elif not (0 <= r.default_action < arity):
                    violations.append(f"roles[{r.name}].default_action not in action space")

    channels: list = []
    for i, ct in enumerate(raw.get("channels", [])):
        path = f"channels[{i}]"
        cname = need(ct, "name", path, str) or f"channel{i}"
        senders = tuple(ct.get("senders", ()))
        receivers = tuple(ct.get("receivers", ()))
        for who in (*senders, *receivers):
            if who not in names_seen:
                violations.append(f"{path} references unknown role {who!r}")
        alphabet = ct.get("alphabet")
        free_text = bool(ct.get("free_text", alphabet is None))
        if alphabet is not None and free_text:
            violations.append(f"{path} cannot be both free_text and symbol-set")
        max_len = int(ct.get("max_len", 280))
        if max_len < 1:
            violations.append(f"{path}.max_len must be positive")
        channels.append(ChannelDef(name=cname, senders=senders, receivers=receivers,
                                   alphabet=tuple(alphabet) if alphabet is not None else None,
                                   max_len=max_len))

    ann_table = raw.get("annotation", {})
    annotation = AnnotationCfg(
        enabled=bool(ann_table.get("enabled", False)),
        beta=float(ann_table.get("beta", 0.5)),
        window_ms=int(ann_table.get("window_ms", 1500)),
    )

    pref_table = raw.get("preferences", {})
    preferences = PreferenceCfg(
        enabled=bool(pref_table.get("enabled", False)),
        source=pref_table.get("source", "recent"),
        items=int(pref_table.get("items", 3)),
        after_episode=int(pref_table.get("after_episode", 1)),
        fit_reward_model=bool(pref_table.get("fit_reward_model", False)),
        target_role=pref_table.get("target_role"),
        horizon=int(pref_table.get("horizon", 25)),
        fit_steps=int(pref_table.get("fit_steps", 200)),
        fit_learning_rate=float(pref_table.get("fit_learning_rate", 0.5)),
    )
    if preferences.enabled and preferences.source not in ("recent", "pareto"):
        violations.append("preferences.source must be 'recent' or 'pareto'")
    if preferences.enabled and preferences.items < 2:
        violations.append("preferences.items must be at least 2")

    # Widget/feature consistency.
    for r in roles:
        if "reward_buttons" in r.widgets and not annotation.enabled:
            violations.append(f"roles[{r.name}].widgets has reward_buttons but annotation is disabled")
        if "ranking_view" in r.widgets and not preferences.enabled:
            violations.append(f"roles[{r.name}].widgets has ranking_view but preferences are disabled")
        if "chat" in r.widgets and not any(r.name in c.senders for c in channels):
            violations.append(f"roles[{r.name}].widgets has chat but no channel lists it as sender")

    rec_table = raw.get("recruitment", {})
    recruitment = RecruitmentBinding(
        entry_params=tuple(rec_table.get("entry_params", ("pid",))),
        completion_secret=rec_table.get("completion_secret", ""),
        redirect_template=rec_table.get("redirect_template", ""),
    )

    episodes = int(raw.get("episodes", DEFAULT_EPISODES))
    if episodes < 1:
        violations.append("episodes must be positive")

    definition = ExperimentDef(
        study_id=study_id or "",
        env_id=env_id or "",
        env_params=env_params,
        roles=tuple(roles),
        agents=agents,
        channels=tuple(channels),
        annotation=annotation,
        preferences=preferences,
        episodes=episodes,
        inter_episode_pause_ms=int(raw.get("inter_episode_pause_ms", DEFAULT_PAUSE_MS)),
        max_session_minutes=int(raw.get("max_session_minutes", DEFAULT_MAX_SESSION_MINUTES)),
        tick_interval_ms=int(raw.get("tick_interval_ms", 0)),
        conditions={},
        recruitment=recruitment,
    )

    # Condition overlays may only touch keys that exist in the canonical tree.
    conditions: dict = {}
    known_keys = set(_flatten_keys(canonical_dict(definition)))
    for cname, overlay in raw.get("conditions", {}).items():
        if not isinstance(overlay, dict):
            violations.append(f"conditions.{cname} must be a table")
            continue
        clean: dict = {}
        for key, value in overlay.items():
            if key not in known_keys:
                violations.append(f"conditions.{cname} overrides undeclared key {key!r}")
            else:
                clean[key] = value
        conditions[cname] = clean

    if violations:
        raise ValidationError(violations)
    return replace(definition, conditions=conditions)


def load_experiment(path: "str | Path") -> ExperimentDef:
    return parse_experiment(Path(path).read_text())


# ---------------------------------------------------------------------------
# Canonical form, serialization, hashing

def canonical_dict(d: ExperimentDef) -> dict:
    """Plain nested dict in canonical key layout, used for hashing and overlays."""
    out: dict = {
        "study_id": d.study_id,
        "episodes": d.episodes,
        "inter_episode_pause_ms": d.inter_episode_pause_ms,
        "max_session_minutes": d.max_session_minutes,
        "tick_interval_ms": d.tick_interval_ms,
        "env": {"id": d.env_id, **d.env_params},
        "roles": [
            {
                "name": r.name,
                "controller": r.controller_kind,
                **({"seat": r.seat} if r.seat is not None else {}),
                **({"default_action": r.default_action} if r.default_action is not None else {}),
                "action_deadline_ms": r.action_deadline_ms,
                "widgets": list(r.widgets),
            }
            for r in d.roles
        ],
        "agents": {
            name: {"algorithm": a.algorithm, **a.hyperparams}
            for name, a in sorted(d.agents.items())
        },
        "channels": [
            {
                "name": c.name,
                "senders": list(c.senders),
                "receivers": list(c.receivers),
                **({"alphabet": list(c.alphabet)} if c.alphabet is not None else {"free_text": True}),
                "max_len": c.max_len,
            }
            for c in d.channels
        ],
        "annotation": {"enabled": d.annotation.enabled, "beta": d.annotation.beta,
                       "window_ms": d.annotation.window_ms},
        "preferences": {
            "enabled": d.preferences.enabled, "source": d.preferences.source,
            "items": d.preferences.items, "after_episode": d.preferences.after_episode,
            "fit_reward_model": d.preferences.fit_reward_model,
            **({"target_role": d.preferences.target_role}
               if d.preferences.target_role is not None else {}),
            "horizon": d.preferences.horizon, "fit_steps": d.preferences.fit_steps,
            "fit_learning_rate": d.preferences.fit_learning_rate,
        },
        "recruitment": {
            "entry_params": list(d.recruitment.entry_params),
            "completion_secret": d.recruitment.completion_secret,
            "redirect_template": d.recruitment.redirect_template,
        },
        "conditions": {name: dict(sorted(ov.items())) for name, ov in sorted(d.conditions.items())},
    }
    return out


def _flatten_keys(tree: dict, prefix: str = "") -> list:
    """Dotted leaf paths of a nested dict (lists are leaves)."""
    keys = []
    for k, v in tree.items():
        path = f"{prefix}{k}"
        if isinstance(v, dict):
            keys.extend(_flatten_keys(v, path + "."))
        else:
            keys.append(path)
    return keys


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {v!r}")


def serialize_experiment(d: ExperimentDef) -> str:
    """Canonical TOML text; parse_experiment(serialize_experiment(d)) == d."""
    tree = canonical_dict(d)
    lines: list = []
    for key in ("study_id", "episodes", "inter_episode_pause_ms",
                "max_session_minutes", "tick_interval_ms"):
        lines.append(f"{key} = {_toml_value(tree[key])}")
    lines.append("")
    lines.append("[env]")
    for k, v in tree["env"].items():
        lines.append(f"{k} = {_toml_value(v)}")
    for r in tree["roles"]:
        lines.append("")
        lines.append("[[roles]]")
        for k, v in r.items():
            lines.append(f"{k} = {_toml_value(v)}")
    for name, a in tree["agents"].items():
        lines.append("")
        lines.append(f"[agents.{json.dumps(name) if not name.isidentifier() else name}]")
        for k, v in a.items():
            lines.append(f"{k} = {_toml_value(v)}")
    for c in tree["channels"]:
        lines.append("")
        lines.append("[[channels]]")
        for k, v in c.items():
            lines.append(f"{k} = {_toml_value(v)}")
    for section in ("annotation", "preferences", "recruitment"):
        lines.append("")
        lines.append(f"[{section}]")
        for k, v in tree[section].items():
            lines.append(f"{k} = {_toml_value(v)}")
    for cname, overlay in tree["conditions"].items():
        lines.append("")
        safe = cname if cname.isidentifier() else json.dumps(cname)
        lines.append(f"[conditions.{safe}]")
        for k, v in overlay.items():
            lines.append(f"{json.dumps(k)} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


def experiment_hash(d: ExperimentDef) -> str:
    canon = json.dumps(canonical_dict(d), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Conditions

def apply_condition(d: ExperimentDef, name: str) -> ExperimentDef:
    """Shallow per-key override: each overlay entry replaces one declared leaf."""
    if name not in d.conditions:
        raise ConfigError(f"unknown condition {name!r}")
    tree = canonical_dict(d)
    for dotted, value in d.conditions[name].items():
        node = tree
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    tree["conditions"] = {}
    rebuilt = _experiment_from_tree(tree)
    return replace(rebuilt, conditions=d.conditions)


def _experiment_from_tree(tree: dict) -> ExperimentDef:
    # The canonical tree is valid TOML-shaped data; round-trip through the parser
    # so validation applies to overlaid values too.
    return parse_experiment(_tree_to_toml(tree))


def _tree_to_toml(tree: dict) -> str:
    d = tree
    lines = []
    for key in ("study_id", "episodes", "inter_episode_pause_ms",
                "max_session_minutes", "tick_interval_ms"):
        lines.append(f"{key} = {_toml_value(d[key])}")
    lines.append("[env]")
    for k, v in d["env"].items():
        lines.append(f"{k} = {_toml_value(v)}")
    for r in d["roles"]:
        lines.append("[[roles]]")
        for k, v in r.items():
            lines.append(f"{k} = {_toml_value(v)}")
    for name, a in d["agents"].items():
        lines.append(f"[agents.{name}]")
        for k, v in a.items():
            lines.append(f"{k} = {_toml_value(v)}")
    for c in d["channels"]:
        lines.append("[[channels]]")
        for k, v in c.items():
            lines.append(f"{k} = {_toml_value(v)}")
    for section in ("annotation", "preferences", "recruitment"):
        lines.append(f"[{section}]")
        for k, v in d[section].items():
            lines.append(f"{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


def assign_condition(d: ExperimentDef, participant_id: str, assignment_seed: int) -> str:
    """Deterministic balanced assignment over the sorted condition names."""
    names = sorted(d.conditions)
    if not names:
        raise ConfigError("experiment declares no conditions")
    key = (assignment_seed & ((1 << 64) - 1)).to_bytes(8, "little")
    digest = hashlib.blake2b(participant_id.encode("utf-8"), key=key, digest_size=8).digest()
    return names[int.from_bytes(digest, "little") % len(names)]


# ---------------------------------------------------------------------------
# Recruitment plumbing

def mint_completion_code(study_id: str, participant_id: str, secret: str) -> str:
    """12 base32 chars of HMAC-SHA256(secret, study_id | participant_id)."""
    mac = hmac.new(secret.encode("utf-8"),
                   f"{study_id}|{participant_id}".encode("utf-8"),
                   hashlib.sha256).digest()
    return base64.b32encode(mac).decode("ascii")[:12]


def verify_completion_code(code: str, study_id: str, participant_id: str, secret: str) -> bool:
    expected = mint_completion_code(study_id, participant_id, secret)
    return hmac.compare_digest(code, expected)


def completion_redirect(binding: RecruitmentBinding, code: str) -> str:
    return binding.redirect_template.replace("{CODE}", code)
