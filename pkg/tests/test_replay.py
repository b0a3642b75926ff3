import json

import pytest

from conftest import FIXTURE_DIR
from harness import CoreHarness
from loopstage.config import apply_condition, load_experiment
from loopstage.core import episode_seed
from loopstage.envs import make_env
from loopstage.events import HashMismatch, read_log
from loopstage.protocol import MessageKind, ProtocolState
from loopstage.replay import export_trajectories, replay, verify, verify_protocol_trace

TEAMING = apply_condition(load_experiment(FIXTURE_DIR / "teaming.toml"), "headless")
UTILITY = apply_condition(load_experiment(FIXTURE_DIR / "utility.toml"), "headless")


def record_teaming_session(tmp_path, seed=13, name="log.jsonl"):
    h = CoreHarness(TEAMING, seed, log_path=tmp_path / name)
    h.join("t1", "p1")
    guard = 0
    while h.core.phase is not ProtocolState.ENDED and guard < 5000:
        guard += 1
        if h.core.phase is ProtocolState.AWAITING_ACTIONS and \
                "scout_a" in h.core.missing_roles():
            if guard % 11 == 0:
                h.chat("t1", "team", "N", tick=h.core.tick)
            if guard % 17 == 0:
                h.suspend("scout_a")
                h.advance(10_001)  # deadline substitutes while disconnected
                h.join("t1", "p1")  # resume
            else:
                h.submit("t1", h.core.tick, guard % 5)
        else:
            h.advance(50)
    h.close()
    return tmp_path / name


def record_utility_session(tmp_path, seed=29, name="utility.jsonl"):
    h = CoreHarness(UTILITY, seed, log_path=tmp_path / name)
    h.join("t1", "p1")
    h.advance(10)
    query = h.frames_of(MessageKind.PREF_QUERY)[0]
    ids = [it["item_id"] for it in query.payload["items"]]
    ranking = sorted(ids, reverse=True)
    h.respond_pref("t1", query.payload["query_id"], ranking)
    h.run_to_completion(step_ms=100)
    h.close()
    return tmp_path / name


def test_recorded_session_replays_fully(tmp_path):
    path = record_teaming_session(tmp_path)
    result = replay(path)
    assert result.ok
    assert result.ticks_checked > 50
    assert result.recomputed == result.logged
    verify(path)


def test_utility_session_with_prefs_replays(tmp_path):
    path = record_utility_session(tmp_path)
    result = replay(path)
    assert result.ok
    assert result.ticks_checked >= 3


def test_truncated_log_prefix_still_verifies(tmp_path):
    path = record_teaming_session(tmp_path)
    lines = path.read_text().splitlines()
    cut = tmp_path / "cut.jsonl"
    cut.write_text("\n".join(lines[: int(len(lines) * 0.6)]) + "\n")
    result = replay(cut)
    assert result.ok
    assert result.ticks_checked > 0


def test_flipped_action_diverges_at_or_after_tick(tmp_path):
    path = record_teaming_session(tmp_path)
    lines = path.read_text().splitlines()
    flipped_tick = None
    for i, line in enumerate(lines):
        if i == 0:
            continue
        obj = json.loads(line)
        if obj["kind"] == MessageKind.ACT_SUBMIT.value and obj["tick"] > 10:
            obj["payload"]["action"] = (obj["payload"]["action"] + 1) % 5
            lines[i] = json.dumps(obj, sort_keys=True, separators=(",", ":"))
            flipped_tick = obj["tick"]
            break
    assert flipped_tick is not None
    tampered = tmp_path / "tampered.jsonl"
    tampered.write_text("\n".join(lines) + "\n")
    result = replay(tampered)
    assert result.first_divergence is not None
    assert result.first_divergence >= flipped_tick
    with pytest.raises(HashMismatch):
        verify(tampered)


def test_flipped_hash_detected_exactly_there(tmp_path):
    path = record_teaming_session(tmp_path)
    lines = path.read_text().splitlines()
    for i, line in enumerate(lines):
        if i == 0:
            continue
        obj = json.loads(line)
        if obj["kind"] == "StateHash" and obj["tick"] == 5:
            obj["payload"]["digest"] ^= 1
            lines[i] = json.dumps(obj, sort_keys=True, separators=(",", ":"))
            break
    tampered = tmp_path / "hash.jsonl"
    tampered.write_text("\n".join(lines) + "\n")
    assert replay(tampered).first_divergence == 5


class TestExport:
    def test_episode_count_matches_episode_end_events(self, tmp_path):
        path = record_teaming_session(tmp_path)
        trajectories = export_trajectories(path)
        _, events = read_log(path)
        ends = [e for e in events if e.kind == MessageKind.EPISODE_END.value]
        assert len(trajectories) == len(ends) == TEAMING.episodes

    def test_total_return_equals_logged_reward_sum(self, tmp_path):
        path = record_teaming_session(tmp_path)
        for traj in export_trajectories(path):
            dims = len(traj.steps[0].reward)
            manual = tuple(sum(s.reward[d] for s in traj.steps) for d in range(dims))
            assert traj.total_return == manual

    def test_exported_trajectory_replays_through_env(self, tmp_path):
        path = record_utility_session(tmp_path)
        for traj in export_trajectories(path):
            env = make_env(UTILITY.env_id, UTILITY.env_params)
            env.reset(traj.seed)
            for step in traj.steps:
                outcome = env.step((step.action,))
                assert tuple(outcome.rewards[0]) == step.reward

    def test_multi_seat_export_replays(self, tmp_path):
        path = record_teaming_session(tmp_path)
        header, _ = read_log(path)
        for episode, traj in enumerate(export_trajectories(path)):
            env = make_env(TEAMING.env_id, TEAMING.env_params)
            env.reset(episode_seed(header.master_seed, episode))
            for step in traj.steps:
                outcome = env.step(step.action)
                assert tuple(outcome.rewards[0]) == step.reward


def test_protocol_trace_of_recorded_logs_never_violates(tmp_path):
    for path in (record_teaming_session(tmp_path),
                 record_utility_session(tmp_path)):
        _, events = read_log(path)
        assert verify_protocol_trace(events) > 10
