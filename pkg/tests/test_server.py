import asyncio
import json
import urllib.error
import urllib.request

import pytest

from drivers import (
    WireClient,
    drive_delegation,
    drive_teaming,
    drive_utility,
    join_bootstrap,
    run_sessions,
)
from loopstage.events import read_log
from loopstage.protocol import MessageKind
from loopstage.replay import replay, verify_protocol_trace


def get_json_error(url):
    try:
        urllib.request.urlopen(url)
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read())
    raise AssertionError("expected an HTTP error")


class TestEntryUrl:
    def test_missing_pid_is_structured_error(self, server_factory):
        handle = server_factory("teaming")
        code, body = get_json_error(f"{handle.base_url}/join?study=teaming-coverage")
        assert code == 400
        assert body["error"]["code"] == "MissingParam"
        assert "pid" in body["error"]["fields"]

    def test_unknown_study_rejected(self, server_factory):
        handle = server_factory("teaming")
        code, body = get_json_error(f"{handle.base_url}/join?study=wrong&pid=p1")
        assert code == 404
        assert body["error"]["code"] == "UnknownStudy"

    def test_join_returns_bootstrap(self, server_factory):
        handle = server_factory("teaming")
        sid = handle.create_session(seed=5)
        boot = join_bootstrap(handle.base_url, "teaming-coverage", "p1", sid)
        assert boot["session_id"] == sid
        assert boot["ws_path"] == f"/ws/{sid}"
        assert boot["token"]
        again = join_bootstrap(handle.base_url, "teaming-coverage", "p1", sid)
        assert again["token"] == boot["token"]  # deterministic minting

    def test_html_entry_serves_page_with_bootstrap(self, server_factory):
        handle = server_factory("teaming")
        sid = handle.create_session(seed=6)
        req = urllib.request.Request(
            f"{handle.base_url}/join?study=teaming-coverage&pid=p1&session={sid}",
            headers={"Accept": "text/html"})
        page = urllib.request.urlopen(req).read().decode()
        assert "window.__LOOPSTAGE__" in page


class TestAdmin:
    def test_status_endpoint(self, server_factory):
        handle = server_factory("teaming")
        sid = handle.create_session(seed=7)
        status = handle.get(f"/admin/sessions/{sid}")
        assert status["session_id"] == sid
        assert status["phase"] == "Lobby"
        assert status["roles"]["scout_b"]["controller_kind"] == "agent"
        assert not status["roles"]["scout_a"]["bound"]

    def test_unknown_session_404(self, server_factory):
        handle = server_factory("teaming")
        code, body = get_json_error(f"{handle.base_url}/admin/sessions/ghost")
        assert code == 404

    def test_admin_end_emits_session_end(self, server_factory):
        handle = server_factory("teaming")
        sid = handle.create_session(seed=8)

        async def run():
            boot = join_bootstrap(handle.base_url, "teaming-coverage", "p1", sid)
            import websockets
            ws = await websockets.connect(f"{handle.ws_base}{boot['ws_path']}")
            client = WireClient(ws, sid, boot["token"])
            await client.join("teaming-coverage", "p1")
            handle.post(f"/admin/sessions/{sid}/end", {"reason": "admin"})
            while True:
                env = await client.recv(timeout=10)
                if env.kind is MessageKind.SESSION_END:
                    return env.payload
        payload = asyncio.run(run())
        assert payload["reason"] == "admin"


class TestWireErrors:
    @pytest.fixture
    def joined(self, server_factory):
        handle = server_factory("teaming")
        sid = handle.create_session(seed=9)

        async def setup():
            boot = join_bootstrap(handle.base_url, "teaming-coverage", "p1", sid)
            import websockets
            ws = await websockets.connect(f"{handle.ws_base}{boot['ws_path']}")
            client = WireClient(ws, sid, boot["token"])
            await client.join("teaming-coverage", "p1")
            tick = None
            while tick is None:
                env = await client.recv()
                if env.kind is MessageKind.ROLE_ASSIGN:
                    client.role = env.payload["role"]
                if env.kind is MessageKind.ACT_REQUEST:
                    tick = env.payload["tick"]
            return client, tick
        return handle, sid, setup

    def test_stale_and_duplicate_submissions(self, joined):
        handle, sid, setup = joined

        async def run():
            client, tick = await setup()
            await client.send(MessageKind.ACT_SUBMIT, {"action": 4}, tick=tick + 1)
            env = await client.recv()
            assert env.kind is MessageKind.ERROR
            assert env.payload["code"] == "StaleTick"

            await client.send(MessageKind.ACT_SUBMIT, {"action": 4}, tick=tick)
            saw_step = False
            while not saw_step:
                env = await client.recv()
                saw_step = env.kind is MessageKind.STEP_BROADCAST
            # The barrier has moved on; a resubmit for the old tick is stale.
            await client.send(MessageKind.ACT_SUBMIT, {"action": 4}, tick=tick)
            while True:
                env = await client.recv()
                if env.kind is MessageKind.ERROR:
                    assert env.payload["code"] == "StaleTick"
                    break
            await client.ws.close()
        asyncio.run(run())

    def test_space_violation_over_wire(self, joined):
        handle, sid, setup = joined

        async def run():
            client, tick = await setup()
            await client.send(MessageKind.ACT_SUBMIT, {"action": 99}, tick=tick)
            env = await client.recv()
            assert env.kind is MessageKind.ERROR
            assert env.payload["code"] == "SpaceViolation"
            await client.ws.close()
        asyncio.run(run())

    def test_heartbeat_echo(self, joined):
        handle, sid, setup = joined

        async def run():
            client, _ = await setup()
            await client.send(MessageKind.HEARTBEAT, {"client_ms": 12345})
            while True:
                env = await client.recv()
                if env.kind is MessageKind.HEARTBEAT:
                    assert env.payload["client_ms"] == 12345
                    assert "server_ms" in env.payload
                    break
            await client.ws.close()
        asyncio.run(run())


class TestEndToEnd:
    def test_teaming_with_reconnect_verifies(self, server_factory):
        handle = server_factory("teaming")
        sid = handle.create_session(seed=11)
        report = asyncio.run(drive_teaming(handle.base_url, handle.ws_base, sid))
        assert report.end_reason == "completed"
        assert report.resumed
        assert report.chats > 0
        assert report.completion_code
        assert not report.errors
        result = replay(handle.log_path(sid))
        assert result.ok
        _, events = read_log(handle.log_path(sid))
        assert verify_protocol_trace(events) > 0

    def test_delegation_grant_revoke_verifies(self, server_factory):
        handle = server_factory("delegation")
        sid = handle.create_session(seed=12)
        report = asyncio.run(drive_delegation(handle.base_url, handle.ws_base, sid))
        assert report.end_reason == "completed"
        assert report.grants == 1 and report.revokes == 1
        assert report.submits >= 30
        assert not report.errors
        assert replay(handle.log_path(sid)).ok
        # Delegation atomicity: exactly one controller filled the pilot seat
        # each tick, and both controller kinds actually drove it.
        _, events = read_log(handle.log_path(sid))
        fills = {}
        kinds = set()
        for e in events:
            if e.kind in ("AgentAction", MessageKind.ACT_SUBMIT.value) \
                    and e.payload["role"] == "pilot":
                fills[e.tick] = fills.get(e.tick, 0) + 1
                kinds.add(e.kind)
        assert set(fills.values()) == {1}
        assert kinds == {"AgentAction", MessageKind.ACT_SUBMIT.value}

    def test_utility_ranking_verifies(self, server_factory):
        handle = server_factory("utility")
        sid = handle.create_session(seed=13)
        report = asyncio.run(drive_utility(handle.base_url, handle.ws_base, sid))
        assert report.end_reason == "completed"
        assert report.rankings == 1
        assert not report.errors
        assert replay(handle.log_path(sid)).ok

    def test_session_isolation_under_concurrency(self, server_factory):
        """The same seed yields the same hash stream alone or among others."""
        handle = server_factory("teaming")
        solo_sid = handle.create_session(seed=77)
        asyncio.run(drive_teaming(handle.base_url, handle.ws_base, solo_sid,
                                  pid="solo", inject_reconnect=False))

        async def crowd():
            sids = [handle.create_session(seed=s) for s in (77, 101, 202, 303)]
            await asyncio.gather(*(
                drive_teaming(handle.base_url, handle.ws_base, sid,
                              pid=f"crowd{i}", inject_reconnect=False)
                for i, sid in enumerate(sids)))
            return sids[0]
        crowd_sid = asyncio.run(crowd())

        def hashes(sid):
            _, events = read_log(handle.log_path(sid))
            return [(e.tick, e.payload["digest"]) for e in events
                    if e.kind == "StateHash"]
        assert hashes(solo_sid) == hashes(crowd_sid)


class TestWriteAhead:
    def test_no_broadcast_before_its_events_are_logged(self, server_factory):
        """Instrumentation: every outbound frame batch follows its appends."""
        handle = server_factory("teaming")
        sid = handle.create_session(seed=31)
        runtime = handle.app.state.loopstage.sessions[sid]
        ops = []
        real_append = runtime.log.append
        real_queue = runtime._queue_frame

        def spy_append(kind, payload, tick, wall):
            ops.append(("append", kind))
            return real_append(kind, payload, tick, wall)

        def spy_queue(token, kind, payload, tick):
            ops.append(("frame", kind.value))
            return real_queue(token, kind, payload, tick)

        runtime.log.append = spy_append
        runtime._queue_frame = spy_queue
        report = asyncio.run(drive_teaming(handle.base_url, handle.ws_base, sid,
                                           pid="wa", inject_reconnect=False))
        assert report.end_reason == "completed"
        # Causal event kinds must be appended before the same kind is framed.
        for causal in (MessageKind.STEP_BROADCAST.value,
                       MessageKind.EPISODE_END.value,
                       MessageKind.SESSION_END.value):
            appended = 0
            for op, kind in ops:
                if kind != causal:
                    continue
                if op == "append":
                    appended += 1
                else:
                    assert appended > 0, f"{causal} framed before any append"


class TestStorageFailure:
    def test_session_halts_with_error_broadcast(self, server_factory):
        handle = server_factory("teaming")
        sid = handle.create_session(seed=21)

        async def run():
            boot = join_bootstrap(handle.base_url, "teaming-coverage", "p1", sid)
            import websockets
            ws = await websockets.connect(f"{handle.ws_base}{boot['ws_path']}")
            client = WireClient(ws, sid, boot["token"])
            await client.join("teaming-coverage", "p1")
            tick = None
            while tick is None:
                env = await client.recv()
                if env.kind is MessageKind.ACT_REQUEST:
                    tick = env.payload["tick"]
                if env.kind is MessageKind.ROLE_ASSIGN:
                    client.role = env.payload["role"]
            # Break the log writer out from under the running session.
            runtime = handle.app.state.loopstage.sessions[sid]
            class Broken:
                def write(self, s):
                    raise OSError(28, "No space left on device")
                def flush(self):
                    pass
                def close(self):
                    pass
            runtime.log._writer = Broken()
            await client.send(MessageKind.ACT_SUBMIT, {"action": 4}, tick=tick)
            while True:
                env = await client.recv(timeout=10)
                if env.kind is MessageKind.ERROR:
                    assert env.payload["code"] == "StorageFailure"
                    break
            assert runtime.halted
            await client.ws.close()
        asyncio.run(run())
