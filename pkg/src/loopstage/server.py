"""Live session server: websocket endpoint, admin endpoints, entry URL.

One asyncio pump task per session owns that session's core and log; network
handlers only enqueue. Every state-affecting input is appended to the event
log before the broadcasts it causes are sent.
"""

from __future__ import annotations

import asyncio
import hashlib
import hmac
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Query, Request
from fastapi.responses import HTMLResponse, JSONResponse, PlainTextResponse
from starlette.websockets import WebSocket, WebSocketDisconnect

from . import BUILD_ID
from .config import (
    ExperimentDef,
    apply_condition,
    assign_condition,
    completion_redirect,
    experiment_hash,
    load_experiment,
)
from .core import CoreResult, Outbound, SessionCore, SessionError
from .events import EventLog, LogHeader, StorageFailure, FORMAT_VERSION
from .protocol import (
    ControllerId,
    Envelope,
    MessageKind,
    ProtocolError,
    ProtocolState,
    encode_envelope,
    decode_envelope,
)
from .rng import derive_seed


def now_ms() -> int:
    return int(time.time() * 1000)


_FALLBACK_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>loopstage</title></head>
<body><h1>loopstage session server</h1>
<p>No UI bundle is installed. Build the frontend and pass --ui-dir, or drive
sessions over the websocket endpoint directly.</p></body></html>
"""


@dataclass
class ServerConfig:
    experiment: ExperimentDef
    log_dir: Path
    base_seed: int = 0
    token_secret: str = "loopstage-dev-secret"
    ui_dir: Optional[Path] = None
    build_id: str = BUILD_ID


class SessionRuntime:
    """Owns one session: core, log, connections, timers, pump task."""

    def __init__(self, session_id: str, experiment: ExperimentDef, master_seed: int,
                 config: ServerConfig):
        self.session_id = session_id
        self.experiment = experiment
        self.config = config
        self.core = SessionCore(experiment, master_seed, session_id, config.build_id)
        config.log_dir.mkdir(parents=True, exist_ok=True)
        log_path = config.log_dir / f"{session_id}.jsonl"
        self.log = EventLog.open(log_path, LogHeader(
            format_version=FORMAT_VERSION, session_id=session_id,
            experiment_hash=experiment_hash(experiment), master_seed=master_seed,
            build_id=config.build_id))
        self.log_path = log_path
        self.queue: asyncio.Queue = asyncio.Queue()
        self.connections: dict = {}   # token -> WebSocket
        self.outboxes: dict = {}      # token -> buffered frames while disconnected
        self.tokens_by_role: dict = {}
        self._deadline_task: Optional[asyncio.Task] = None
        self._deadline_tick: Optional[int] = None
        self._pump_task: Optional[asyncio.Task] = None
        self._aux_tasks: list = []
        self.halted = False
        self.created_ms = now_ms()

    # -- pump -----------------------------------------------------------------

    async def start(self) -> None:
        self._pump_task = asyncio.create_task(self._pump())
        await self.queue.put(("bootstrap", None))
        cap_ms = self.experiment.max_session_minutes * 60_000
        self._aux_tasks.append(asyncio.create_task(
            self._later(cap_ms, ("end", "max_session_time"))))

    async def _later(self, delay_ms: int, item: tuple) -> None:
        await asyncio.sleep(delay_ms / 1000)
        await self.queue.put(item)

    async def _pump(self) -> None:
        while True:
            item = await self.queue.get()
            if item[0] == "stop":
                break
            try:
                await self._handle(item)
            except StorageFailure as exc:
                await self._halt_on_storage_failure(exc)
                break
            except Exception:  # a bad frame must not take the session down
                import traceback
                traceback.print_exc()

    async def _handle(self, item: tuple) -> None:
        kind = item[0]
        wall = now_ms()
        if kind == "bootstrap":
            result = self.core.bootstrap(wall)
            await self._commit(result, wall)
            if result.start_ready:
                await self._start_episode(wall)
        elif kind == "wire":
            _, token, envelope = item
            await self._handle_wire(token, envelope, wall)
        elif kind == "deadline":
            _, tick = item
            await self._fire_deadline(tick, wall)
        elif kind == "start":
            _, episode = item
            if self.core.phase is ProtocolState.BETWEEN_EPISODES \
                    and self.core.episode == episode:
                await self._start_episode(wall)
        elif kind == "pace":
            _, tick = item
            if self.core.tick == tick:
                result = self.core.ext_tick_advance({}, wall)
                await self._commit(result, wall)
        elif kind == "suspend":
            _, token = item
            role = self._role_of_token(token)
            if role is not None and not self.halted \
                    and self.core.phase is not ProtocolState.ENDED:
                result = self.core.ext_binding_suspended({"role": role}, wall)
                await self._commit(result, wall)
        elif kind == "end":
            _, reason = item
            if self.core.phase is not ProtocolState.ENDED:
                result = self.core.ext_end_requested({"reason": reason}, wall)
                await self._commit(result, wall)

    def _role_of_token(self, token: str) -> Optional[str]:
        for b in self.core.bindings.values():
            if b.token == token:
                return b.role_name
        return None

    async def _start_episode(self, wall: int) -> None:
        result = self.core.ext_start_episode({"episode": self.core.episode}, wall)
        await self._commit(result, wall)

    async def _fire_deadline(self, tick: int, wall: int) -> None:
        barrier = self.core.barrier
        if barrier is None or barrier.tick != tick or barrier.complete:
            return
        if self.core.phase is not ProtocolState.AWAITING_ACTIONS:
            return
        for role in self.core.missing_roles():
            default = self.experiment.role(role).default_action
            result = self.core.ext_timeout_substitution(
                {"role": role, "action": default}, wall)
            await self._commit(result, wall)

    # -- wire handling -----------------------------------------------------------

    async def _handle_wire(self, token: str, envelope: Envelope, wall: int) -> None:
        try:
            result = self._apply_wire(token, envelope, wall)
        except SessionError as exc:
            await self._send_error(token, exc.code, exc.message, exc.field)
            return
        except ProtocolError as exc:
            await self._send_error(token, exc.code, exc.message,
                                   getattr(exc, "field", None))
            return
        if result is None:
            return
        if not result.accepted and result.error is not None:
            code, message, field_name = result.error
            await self._send_error(token, code, message, field_name)
            return
        await self._commit(result, wall)
        if result.start_ready:
            await self._start_episode(wall)

    def _apply_wire(self, token: str, env: Envelope, wall: int) -> Optional[CoreResult]:
        core = self.core
        kind = env.kind
        if kind is MessageKind.HEARTBEAT:
            reply = {"server_ms": wall}
            if "client_ms" in env.payload:
                reply["client_ms"] = env.payload["client_ms"]
            self._queue_frame(token, MessageKind.HEARTBEAT, reply, None)
            return None
        if self.halted or core.phase is ProtocolState.ENDED:
            raise SessionError("ProtocolViolation", "session has ended")
        if kind is MessageKind.JOIN:
            role, resume = core.validate_join(
                env.payload["token"], env.payload["study_id"],
                env.payload["participant_id"], env.payload.get("requested_role"))
            if resume:
                return core.ext_binding_resumed({"role": role}, wall)
            return core.ext_join({
                "role": role,
                "token": env.payload["token"],
                "participant_id": env.payload["participant_id"],
                "study_id": env.payload["study_id"],
            }, wall)
        if kind is MessageKind.ACT_SUBMIT:
            role = core.validate_act_submit(token, env.tick, env.payload["action"],
                                            env.payload.get("role"))
            return core.ext_act_submit({"role": role, "action": env.payload["action"]},
                                       env.tick, wall)
        if kind is MessageKind.REWARD_ANNOTATION:
            role = core.validate_annotation(token)
            return core.ext_reward_annotation(
                {"role": role, "value": env.payload["value"], "sent_at": env.sent_at},
                env.tick, wall)
        if kind is MessageKind.CHANNEL_MSG:
            role = core.validate_channel_msg(token, env.payload["channel"],
                                             env.payload["content"])
            return core.ext_channel_msg(
                {"role": role, "channel": env.payload["channel"],
                 "content": env.payload["content"]}, env.tick, wall)
        if kind is MessageKind.DELEGATION_REQUEST:
            sender = self._role_of_token(token)
            if env.payload["role"] not in core.bindings:
                raise SessionError("NoSuchRole", f"no role {env.payload['role']!r}", "role")
            core.resolve_delegation_target(env.payload["role"], env.payload["target_kind"])
            return core.ext_delegation_request(
                {"role": env.payload["role"], "target_kind": env.payload["target_kind"],
                 "from_role": sender}, env.tick, wall)
        if kind is MessageKind.DELEGATION_GRANT:
            target = core.resolve_delegation_target(env.payload["role"],
                                                    env.payload["target_kind"])
            return core.ext_delegation_grant(
                {"role": env.payload["role"], "target_kind": env.payload["target_kind"],
                 "target": target.to_json()}, env.tick, wall)
        if kind is MessageKind.DELEGATION_REVOKE:
            if env.payload["role"] not in core.bindings:
                raise SessionError("NoSuchRole", f"no role {env.payload['role']!r}", "role")
            return core.ext_delegation_revoke({"role": env.payload["role"]}, wall)
        if kind is MessageKind.PREF_RESPONSE:
            role = core.validate_pref_response(token, env.payload["query_id"],
                                               env.payload["ranking"])
            return core.ext_pref_response(
                {"role": role, "query_id": env.payload["query_id"],
                 "ranking": env.payload["ranking"]}, wall)
        raise SessionError("ProtocolViolation",
                           f"clients may not send {kind.value}")

    # -- commit and fan-out ---------------------------------------------------------

    async def _commit(self, result: CoreResult, wall: int) -> None:
        for kind, tick, payload in result.logged:
            self.log.append(kind, payload, tick, wall)
        for out in result.outbound:
            await self._fan_out(out, wall)
        self._reconcile_timers(result)

    def _reconcile_timers(self, result: CoreResult) -> None:
        if result.barrier_deadline_rel_ms is not None:
            barrier = self.core.barrier
            if barrier is not None and (self._deadline_tick != barrier.tick):
                if self._deadline_task is not None:
                    self._deadline_task.cancel()
                self._deadline_tick = barrier.tick
                self._deadline_task = asyncio.create_task(
                    self._later(result.barrier_deadline_rel_ms,
                                ("deadline", barrier.tick)))
        if result.schedule_start_delay_ms is not None:
            self._aux_tasks.append(asyncio.create_task(
                self._later(result.schedule_start_delay_ms,
                            ("start", self.core.episode))))
        if result.schedule_tick_delay_ms is not None:
            self._aux_tasks.append(asyncio.create_task(
                self._later(result.schedule_tick_delay_ms,
                            ("pace", self.core.tick))))
        if result.session_over:
            self.log.close()

    async def _fan_out(self, out: Outbound, wall: int) -> None:
        if out.target_type == "broadcast":
            for token in list(self.tokens_by_role.values()):
                self._queue_frame(token, out.kind, out.payload, out.tick)
        elif out.target_type == "token":
            self._queue_frame(out.target, out.kind, out.payload, out.tick)
        elif out.target_type == "role":
            token = self.tokens_by_role.get(out.target)
            if token is not None:
                self._queue_frame(token, out.kind, out.payload, out.tick)
        await self._flush_frames()

    def _queue_frame(self, token: str, kind: MessageKind, payload: dict,
                     tick: Optional[int]) -> None:
        envelope = Envelope(session_id=self.session_id, sender="server", kind=kind,
                            payload=payload, tick=tick, sent_at=now_ms())
        self.outboxes.setdefault(token, []).append(encode_envelope(envelope))
        # Track role->token bindings lazily from the core.
        for b in self.core.bindings.values():
            if b.token is not None:
                self.tokens_by_role[b.role_name] = b.token

    async def _flush_frames(self) -> None:
        for token, frames in list(self.outboxes.items()):
            ws = self.connections.get(token)
            if ws is None:
                continue  # stays buffered until resume
            remaining = []
            for frame in frames:
                try:
                    await ws.send_text(frame.decode("utf-8"))
                except Exception:
                    remaining = frames[frames.index(frame):]
                    break
            self.outboxes[token] = remaining

    async def _send_error(self, token: str, code: str, message: str,
                          field_name: Optional[str]) -> None:
        payload = {"code": code, "message": message}
        if field_name:
            payload["field"] = field_name
        self._queue_frame(token, MessageKind.ERROR, payload, None)
        await self._flush_frames()

    async def _halt_on_storage_failure(self, exc: StorageFailure) -> None:
        self.halted = True
        for token in list(self.connections):
            self._queue_frame(token, MessageKind.ERROR,
                              {"code": "StorageFailure", "message": str(exc)}, None)
        await self._flush_frames()
        for ws in self.connections.values():
            try:
                await ws.close()
            except Exception:
                pass

    async def attach(self, token: str, ws: WebSocket) -> None:
        self.connections[token] = ws
        for b in self.core.bindings.values():
            if b.token is not None:
                self.tokens_by_role[b.role_name] = b.token
        await self._flush_frames()

    async def detach(self, token: str) -> None:
        self.connections.pop(token, None)
        await self.queue.put(("suspend", token))

    async def stop(self) -> None:
        await self.queue.put(("stop", None))
        for task in self._aux_tasks:
            task.cancel()
        if self._deadline_task is not None:
            self._deadline_task.cancel()
        if self._pump_task is not None:
            await self._pump_task
        self.log.close()


class LoopstageServer:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.sessions: dict = {}
        self._session_counter = 0

    def mint_token(self, study_id: str, participant_id: str, session_id: str) -> str:
        mac = hmac.new(self.config.token_secret.encode(),
                       f"{study_id}|{participant_id}|{session_id}".encode(),
                       hashlib.sha256).hexdigest()
        return mac[:24]

    async def create_session(self, seed: Optional[int] = None,
                             condition: Optional[str] = None,
                             session_id: Optional[str] = None) -> SessionRuntime:
        self._session_counter += 1
        if session_id is None:
            session_id = f"s{self._session_counter:04d}"
        if session_id in self.sessions:
            raise SessionError("Duplicate", f"session {session_id!r} exists")
        if seed is None:
            seed = derive_seed(self.config.base_seed, f"session:{self._session_counter}")
        experiment = self.config.experiment
        if condition is not None:
            experiment = apply_condition(experiment, condition)
        runtime = SessionRuntime(session_id, experiment, seed, self.config)
        self.sessions[session_id] = runtime
        await runtime.start()
        return runtime

    def find_open_session(self) -> Optional[SessionRuntime]:
        for runtime in self.sessions.values():
            if runtime.core.phase in (ProtocolState.LOBBY, ProtocolState.ASSIGNED) \
                    and runtime.core._human_vacancies():
                return runtime
        return None


def build_app(config: ServerConfig) -> FastAPI:
    app = FastAPI(title="loopstage", version=BUILD_ID)
    server = LoopstageServer(config)
    app.state.loopstage = server

    @app.get("/healthz")
    async def healthz():
        return {"ok": True, "build": config.build_id}

    @app.post("/admin/sessions")
    async def admin_create(body: dict):
        try:
            runtime = await server.create_session(
                seed=body.get("seed"), condition=body.get("condition"),
                session_id=body.get("session_id"))
        except SessionError as exc:
            return JSONResponse({"error": {"code": exc.code, "message": exc.message}},
                                status_code=400)
        except Exception as exc:
            return JSONResponse({"error": {"code": "ConfigError", "message": str(exc)}},
                                status_code=400)
        return {"session_id": runtime.session_id,
                "study_id": runtime.experiment.study_id,
                "log_path": str(runtime.log_path)}

    @app.get("/admin/sessions")
    async def admin_list():
        return {"sessions": [r.core.status() for r in server.sessions.values()]}

    @app.get("/admin/sessions/{session_id}")
    async def admin_status(session_id: str):
        runtime = server.sessions.get(session_id)
        if runtime is None:
            return JSONResponse({"error": {"code": "UnknownSession"}}, status_code=404)
        return runtime.core.status()

    @app.post("/admin/sessions/{session_id}/end")
    async def admin_end(session_id: str, body: Optional[dict] = None):
        runtime = server.sessions.get(session_id)
        if runtime is None:
            return JSONResponse({"error": {"code": "UnknownSession"}}, status_code=404)
        reason = (body or {}).get("reason", "admin")
        await runtime.queue.put(("end", reason))
        return {"ok": True}

    @app.get("/join")
    async def join(request: Request, study: Optional[str] = Query(None),
                   pid: Optional[str] = Query(None),
                   session: Optional[str] = Query(None)):
        experiment = config.experiment
        missing = []
        if study is None:
            missing.append("study")
        for param in experiment.recruitment.entry_params:
            if request.query_params.get(param) is None:
                missing.append(param)
        if missing:
            return JSONResponse(
                {"error": {"code": "MissingParam", "message":
                           f"missing required entry parameters: {missing}",
                           "fields": missing}}, status_code=400)
        if study != experiment.study_id:
            return JSONResponse(
                {"error": {"code": "UnknownStudy",
                           "message": f"this server hosts {experiment.study_id!r}"}},
                status_code=404)
        runtime = None
        if session is not None:
            runtime = server.sessions.get(session)
            if runtime is None:
                return JSONResponse({"error": {"code": "UnknownSession"}}, status_code=404)
        else:
            runtime = server.find_open_session()
            if runtime is None:
                condition = None
                if experiment.conditions:
                    condition = assign_condition(experiment, pid, config.base_seed)
                runtime = await server.create_session(condition=condition)
        token = server.mint_token(study, pid, runtime.session_id)
        bootstrap = {
            "session_id": runtime.session_id,
            "token": token,
            "study_id": study,
            "participant_id": pid,
            "ws_path": f"/ws/{runtime.session_id}",
            "redirect_template": experiment.recruitment.redirect_template,
        }
        accept = request.headers.get("accept", "")
        if "text/html" in accept and "application/json" not in accept.split(",")[0]:
            page = _ui_page(config, bootstrap)
            return HTMLResponse(page)
        return bootstrap

    @app.get("/")
    async def index():
        return HTMLResponse(_ui_page(config, None))

    @app.get("/static/{path:path}")
    async def static(path: str):
        if config.ui_dir is None:
            return PlainTextResponse("no UI assets", status_code=404)
        target = (config.ui_dir / path).resolve()
        if not str(target).startswith(str(config.ui_dir.resolve())) or not target.is_file():
            return PlainTextResponse("not found", status_code=404)
        media = "text/javascript" if target.suffix in (".js", ".mjs") else "text/plain"
        if target.suffix == ".css":
            media = "text/css"
        if target.suffix == ".html":
            media = "text/html"
        return PlainTextResponse(target.read_text(), media_type=media)

    @app.websocket("/ws/{session_id}")
    async def ws_endpoint(ws: WebSocket, session_id: str):
        await ws.accept()
        runtime = server.sessions.get(session_id)
        if runtime is None:
            err = Envelope(session_id=session_id, sender="server",
                           kind=MessageKind.ERROR,
                           payload={"code": "UnknownSession", "message": "no such session"},
                           sent_at=now_ms())
            await ws.send_text(encode_envelope(err).decode())
            await ws.close()
            return
        token: Optional[str] = None
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    envelope = decode_envelope(raw.encode("utf-8"))
                except ProtocolError as exc:
                    err = Envelope(session_id=session_id, sender="server",
                                   kind=MessageKind.ERROR,
                                   payload={"code": exc.code, "message": exc.message},
                                   sent_at=now_ms())
                    await ws.send_text(encode_envelope(err).decode())
                    continue
                if envelope.kind is MessageKind.JOIN and token is None:
                    token = envelope.payload["token"]
                    await runtime.attach(token, ws)
                if token is None:
                    err = Envelope(session_id=session_id, sender="server",
                                   kind=MessageKind.ERROR,
                                   payload={"code": "ProtocolViolation",
                                            "message": "first frame must be Join"},
                                   sent_at=now_ms())
                    await ws.send_text(encode_envelope(err).decode())
                    continue
                await runtime.queue.put(("wire", token, envelope))
        except WebSocketDisconnect:
            pass
        finally:
            if token is not None:
                await runtime.detach(token)

    return app


def _ui_page(config: ServerConfig, bootstrap: Optional[dict]) -> str:
    import json as _json
    boot_script = ""
    if bootstrap is not None:
        boot_script = f"<script>window.__LOOPSTAGE__ = {_json.dumps(bootstrap)};</script>"
    if config.ui_dir is not None and (config.ui_dir / "index.html").is_file():
        page = (config.ui_dir / "index.html").read_text()
        return page.replace("<!--BOOTSTRAP-->", boot_script)
    return _FALLBACK_PAGE.replace("</body>", boot_script + "</body>")


def serve(experiment_path: "str | Path", port: int, log_dir: "str | Path",
          base_seed: int = 0, ui_dir: "str | Path | None" = None,
          host: str = "127.0.0.1") -> None:
    """Blocking entry point used by the CLI."""
    import uvicorn

    experiment = load_experiment(experiment_path)
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    config = ServerConfig(experiment=experiment, log_dir=log_dir, base_seed=base_seed,
                          ui_dir=Path(ui_dir) if ui_dir else None)
    app = build_app(config)
    uvicorn.run(app, host=host, port=port, log_level="warning")
