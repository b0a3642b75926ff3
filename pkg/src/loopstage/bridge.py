"""Out-of-process environments served over line-delimited JSON RPC.

Default transport is a child process speaking the protocol on stdio; a TCP
address works too. Pipelining depth is 1: exactly one outstanding request,
responses must arrive in order with matching ids. docs/bridge.md documents
the frames.
"""

from __future__ import annotations

import json
import queue
import shlex
import socket
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .envs.base import EnvCapabilities, Environment, RenderFrame, StepOutcome
from .events import canonical_json, fnv1a64

HANDSHAKE_TIMEOUT_S = 5.0
CALL_TIMEOUT_S = 2.0

REQUEST_KINDS = ("Hello", "Reset", "Step", "Render", "Close")
RESPONSE_KINDS = ("HelloAck", "ResetResult", "StepResult", "RenderResult", "EnvError")


class BridgeError(RuntimeError):
    pass


class HandshakeTimeout(BridgeError):
    pass


class CapabilityInvalid(BridgeError):
    pass


class BridgeTimeout(BridgeError):
    pass


class ProtocolDesync(BridgeError):
    pass


class RemoteEnvError(BridgeError):
    """Remote exception text relayed to the caller."""


class _Transport:
    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def recv_line(self, timeout: float) -> Optional[str]:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class _StdioTransport(_Transport):
    def __init__(self, cmd: Sequence):
        self.proc = subprocess.Popen(
            list(cmd), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, text=True, bufsize=1)
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            for line in self.proc.stdout:
                self._lines.put(line)
        except ValueError:
            pass
        self._lines.put(None)

    def send_line(self, line: str) -> None:
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(f"bridge process closed stdin: {exc}") from exc

    def recv_line(self, timeout: float) -> Optional[str]:
        try:
            return self._lines.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.terminate()
            self.proc.wait(timeout=2)
        except Exception:
            self.proc.kill()


class _SocketTransport(_Transport):
    def __init__(self, address: tuple):
        self.sock = socket.create_connection(address, timeout=HANDSHAKE_TIMEOUT_S)
        self._file = self.sock.makefile("r", encoding="utf-8")

    def send_line(self, line: str) -> None:
        self.sock.sendall((line + "\n").encode("utf-8"))

    def recv_line(self, timeout: float) -> Optional[str]:
        self.sock.settimeout(timeout)
        try:
            return self._file.readline() or None
        except socket.timeout:
            return None

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


@dataclass
class BridgeHandle:
    transport: _Transport
    state: str = "Handshaking"          # Handshaking | Ready | Dead
    negotiated: Optional[EnvCapabilities] = None
    last_response_ms: int = 0
    _next_id: int = field(default=0, repr=False)

    @classmethod
    def spawn(cls, cmd: "str | Sequence") -> "BridgeHandle":
        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        return cls(transport=_StdioTransport(argv))

    @classmethod
    def connect(cls, host: str, port: int) -> "BridgeHandle":
        return cls(transport=_SocketTransport((host, port)))

    def _mark_dead(self) -> None:
        self.state = "Dead"
        self.transport.close()

    def _call(self, kind: str, payload: dict, timeout: float) -> dict:
        self._next_id += 1
        req_id = self._next_id
        self.transport.send_line(json.dumps(
            {"id": req_id, "kind": kind, "payload": payload},
            separators=(",", ":")))
        line = self.transport.recv_line(timeout)
        if line is None:
            self._mark_dead()
            raise BridgeTimeout(f"no response to {kind} within {timeout}s")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            self._mark_dead()
            raise BridgeError(f"unparseable bridge response: {exc}") from None
        if reply.get("id") != req_id:
            self._mark_dead()
            raise ProtocolDesync(
                f"response id {reply.get('id')} does not match request id {req_id}")
        if reply.get("kind") == "EnvError":
            raise RemoteEnvError(reply.get("payload", {}).get("message", "remote error"))
        if reply.get("kind") not in RESPONSE_KINDS:
            self._mark_dead()
            raise BridgeError(f"unknown response kind {reply.get('kind')!r}")
        import time
        self.last_response_ms = int(time.time() * 1000)
        return reply

    def handshake(self, timeout: float = HANDSHAKE_TIMEOUT_S) -> EnvCapabilities:
        if self.state == "Dead":
            raise BridgeError("handle is dead")
        line_reply = self._call("Hello", {"protocol": 1}, timeout)
        if line_reply["kind"] != "HelloAck":
            self._mark_dead()
            raise BridgeError(f"expected HelloAck, got {line_reply['kind']}")
        caps_json = line_reply["payload"].get("capabilities", {})
        try:
            caps = EnvCapabilities.from_json(caps_json)
        except (KeyError, TypeError, ValueError) as exc:
            self._mark_dead()
            raise CapabilityInvalid(f"bad capabilities: {exc}") from None
        for space in caps.action_spaces:
            if not hasattr(space, "contains"):
                self._mark_dead()
                raise CapabilityInvalid("unsupported action space variant")
        self.negotiated = caps
        self.state = "Ready"
        return caps

    def _require_ready(self) -> None:
        if self.state != "Ready":
            raise BridgeError(f"handle is {self.state}, not Ready")

    def rpc_reset(self, seed: int, timeout: float = CALL_TIMEOUT_S) -> tuple:
        self._require_ready()
        reply = self._call("Reset", {"seed": seed}, timeout)
        return tuple(tuple(o) for o in reply["payload"]["observations"])

    def rpc_step(self, joint_action: Sequence, timeout: float = CALL_TIMEOUT_S) -> StepOutcome:
        self._require_ready()
        reply = self._call("Step", {"joint_action": list(joint_action)}, timeout)
        return StepOutcome.from_json(reply["payload"])

    def rpc_render(self, timeout: float = CALL_TIMEOUT_S) -> dict:
        self._require_ready()
        reply = self._call("Render", {}, timeout)
        return reply["payload"]["frame"]

    def close(self) -> None:
        if self.state == "Ready":
            try:
                self._call("Close", {}, timeout=1.0)
            except BridgeError:
                pass
        self._mark_dead()


class BridgedEnvironment(Environment):
    """env_kernel adapter over a live bridge handle."""

    def __init__(self, handle: BridgeHandle, env_id: str = "bridged"):
        if handle.state != "Ready":
            handle.handshake()
        self.handle = handle
        self.env_id = env_id
        self.capabilities = handle.negotiated
        self._outcome_digest = 0
        self._steps = 0

    def reset(self, seed: int) -> tuple:
        obs = self.handle.rpc_reset(seed)
        self._outcome_digest = fnv1a64(canonical_json(
            {"reset": seed, "obs": [list(o) for o in obs]}).encode())
        self._steps = 0
        return obs

    def step(self, joint_action: Sequence) -> StepOutcome:
        outcome = self.handle.rpc_step(joint_action)
        self._steps += 1
        self._outcome_digest = fnv1a64(canonical_json(
            {"prev": self._outcome_digest, "outcome": outcome.to_json()}).encode())
        return outcome

    def render(self) -> RenderFrame:
        frame = self.handle.rpc_render()
        from .envs.base import Cell, Sprite
        return RenderFrame(
            mode=frame["mode"], width=frame["width"], height=frame["height"],
            cells=tuple(Cell(x=c["x"], y=c["y"], kind=c["kind"], walls=c.get("walls", ""))
                        for c in frame.get("cells", [])),
            sprites=tuple(Sprite(x=s["x"], y=s["y"], kind=s["kind"],
                                 label=s.get("label", ""))
                          for s in frame.get("sprites", [])),
            overlay_text=tuple(frame.get("overlay_text", [])),
        )

    def state_dict(self) -> dict:
        # Remote internals are opaque; hash the outcome stream instead.
        return {"env_id": self.env_id, "outcome_digest": self._outcome_digest,
                "steps": self._steps}


# ---------------------------------------------------------------------------
# Conformance checks

@dataclass(frozen=True)
class ConformanceCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ConformanceReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _script_actions(caps: EnvCapabilities, length: int, seed: int = 17) -> list:
    from .rng import SplitMix64
    stream = SplitMix64(seed)
    joint = []
    for _ in range(length):
        joint.append(tuple(stream.next_below(s.n) for s in caps.action_spaces))
    return joint


def conformance_suite(handle: BridgeHandle, probe_steps: int = 64) -> ConformanceReport:
    """Determinism, space-violation rejection, and termination-contract checks."""
    checks: list = []
    caps = handle.negotiated if handle.state == "Ready" else handle.handshake()
    script = _script_actions(caps, probe_steps)

    def run_script() -> list:
        obs = handle.rpc_reset(7)
        outcomes: list = [{"reset_observations": [list(o) for o in obs]}]
        for joint in script:
            outcome = handle.rpc_step(joint)
            outcomes.append(outcome.to_json())
            if outcome.terminated or outcome.truncated:
                break
        return outcomes

    try:
        first = run_script()
        second = run_script()
        same = first == second
        checks.append(ConformanceCheck(
            "determinism", same,
            "identical outcome streams for repeated (seed, script)" if same
            else "outcome streams diverged for identical (seed, script)"))
    except BridgeError as exc:
        checks.append(ConformanceCheck("determinism", False, f"bridge failure: {exc}"))
        return ConformanceReport(checks=tuple(checks))

    try:
        handle.rpc_reset(7)
        bad = tuple(s.n for s in caps.action_spaces)  # one past the top of each space
        try:
            handle.rpc_step(bad)
            checks.append(ConformanceCheck(
                "space_violation", False, "out-of-space action was accepted"))
        except RemoteEnvError:
            checks.append(ConformanceCheck(
                "space_violation", True, "out-of-space action rejected"))
    except BridgeError as exc:
        checks.append(ConformanceCheck("space_violation", False, f"bridge failure: {exc}"))

    try:
        handle.rpc_reset(7)
        terminated = False
        for joint in _script_actions(caps, 2000, seed=23):
            outcome = handle.rpc_step(joint)
            if outcome.terminated or outcome.truncated:
                terminated = True
                break
        if not terminated:
            checks.append(ConformanceCheck(
                "termination_contract", False, "episode never ended under probe script"))
        else:
            try:
                handle.rpc_step(_script_actions(caps, 1, seed=29)[0])
                checks.append(ConformanceCheck(
                    "termination_contract", False, "step after episode end was accepted"))
            except RemoteEnvError:
                checks.append(ConformanceCheck(
                    "termination_contract", True, "step after episode end rejected"))
    except BridgeError as exc:
        checks.append(ConformanceCheck("termination_contract", False,
                                       f"bridge failure: {exc}"))

    return ConformanceReport(checks=tuple(checks))
