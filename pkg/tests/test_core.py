import pytest

from conftest import FIXTURE_DIR
from harness import CoreHarness
from loopstage import BUILD_ID
from loopstage.config import apply_condition, load_experiment, parse_experiment
from loopstage.core import SessionCore, SessionError, episode_seed
from loopstage.protocol import MessageKind, ProtocolState
from loopstage.rng import derive_seed

TEAMING = apply_condition(load_experiment(FIXTURE_DIR / "teaming.toml"), "headless")
ANNOTATION = apply_condition(load_experiment(FIXTURE_DIR / "annotation.toml"), "headless")
DELEGATION = apply_condition(load_experiment(FIXTURE_DIR / "delegation.toml"), "headless")
UTILITY = apply_condition(load_experiment(FIXTURE_DIR / "utility.toml"), "headless")

TWO_HUMANS = parse_experiment("""
study_id = "duo"
episodes = 2
inter_episode_pause_ms = 0

[env]
id = "coverage_team"
n = 2
k = 4

[[roles]]
name = "alpha"
controller = "human"
seat = 0
default_action = 4
action_deadline_ms = 500

[[roles]]
name = "beta"
controller = "human"
seat = 1
default_action = 4
action_deadline_ms = 800
""")


def logged_kinds(result):
    return [k for k, _, _ in result.logged]


class TestCreation:
    def test_single_human_role_starts_vacant(self):
        core = SessionCore(TEAMING, 1, "s", BUILD_ID)
        assert core.bindings["scout_a"].controller is None
        assert core.bindings["scout_b"].controller is not None

    def test_same_seed_same_initial_hash(self):
        a = SessionCore(TEAMING, 42, "s", BUILD_ID)
        b = SessionCore(TEAMING, 42, "s", BUILD_ID)
        assert a.state_hash() == b.state_hash()
        c = SessionCore(TEAMING, 43, "s", BUILD_ID)
        assert a.state_hash() != c.state_hash()

    def test_env_seed_derivation(self):
        assert episode_seed(42, 0) == derive_seed(42, "env")
        assert episode_seed(42, 1) == derive_seed(42, "env:1")
        assert episode_seed(42, 1) != episode_seed(42, 2)


class TestJoin:
    def test_auto_assigns_lowest_lex_vacant(self):
        h = CoreHarness(TWO_HUMANS, 5)
        h.join("t1", "p1")
        assert h.core.bindings["alpha"].token == "t1"
        h.join("t2", "p2")
        assert h.core.bindings["beta"].token == "t2"

    def test_requested_taken_role_rejected(self):
        h = CoreHarness(TWO_HUMANS, 5)
        h.join("t1", "p1", requested_role="alpha")
        with pytest.raises(SessionError) as err:
            h.core.validate_join("t9", "duo", "p9", "alpha")
        assert err.value.code == "RoleTaken"

    def test_last_join_starts_episode_in_same_step(self):
        h = CoreHarness(TWO_HUMANS, 5)
        h.join("t1", "p1")
        assert h.core.phase is ProtocolState.ASSIGNED
        h.join("t2", "p2")
        assert h.core.phase is ProtocolState.AWAITING_ACTIONS
        kinds = [o.kind for o in h.outbound]
        assert MessageKind.START_EPISODE in kinds

    def test_join_after_start_is_session_full(self):
        h = CoreHarness(TWO_HUMANS, 5)
        h.join("t1", "p1")
        h.join("t2", "p2")
        with pytest.raises(SessionError) as err:
            h.core.validate_join("t3", "duo", "p3", None)
        assert err.value.code == "SessionFull"

    def test_wrong_study_is_unknown_token(self):
        h = CoreHarness(TWO_HUMANS, 5)
        with pytest.raises(SessionError) as err:
            h.core.validate_join("t1", "other-study", "p1", None)
        assert err.value.code == "UnknownToken"


class TestBarrier:
    def make(self):
        h = CoreHarness(TWO_HUMANS, 5)
        h.join("t1", "p1")
        h.join("t2", "p2")
        return h

    def test_accepts_current_tick(self):
        h = self.make()
        tick = h.core.tick
        h.submit("t1", tick, 1)
        assert h.core.barrier.received == {"alpha"}
        assert h.core.tick == tick  # still waiting for beta

    def test_stale_tick_rejected(self):
        h = self.make()
        with pytest.raises(SessionError) as err:
            h.core.validate_act_submit("t1", h.core.tick - 1, 1, None)
        assert err.value.code == "StaleTick"

    def test_duplicate_first_write_wins(self):
        h = self.make()
        tick = h.core.tick
        h.submit("t1", tick, 1)
        with pytest.raises(SessionError) as err:
            h.core.validate_act_submit("t1", tick, 3, None)
        assert err.value.code == "Duplicate"
        assert h.core.pending_actions["alpha"] == 1

    def test_space_violation_rejected(self):
        h = self.make()
        with pytest.raises(SessionError) as err:
            h.core.validate_act_submit("t1", h.core.tick, 99, None)
        assert err.value.code == "SpaceViolation"

    def test_not_your_turn_for_strangers(self):
        h = self.make()
        with pytest.raises(SessionError) as err:
            h.core.validate_act_submit("t9", h.core.tick, 1, None)
        assert err.value.code == "NotYourTurn"

    def test_step_uses_exactly_submitted_actions(self):
        h = self.make()
        tick = h.core.tick
        h.submit("t1", tick, 2)
        result = h.submit("t2", tick, 3)
        steps = [(k, p) for k, _, p in result.logged
                 if k == MessageKind.STEP_BROADCAST.value]
        assert len(steps) == 1
        assert steps[0][1]["actions"] == {"alpha": 2, "beta": 3}
        assert h.core.tick == tick + 1

    def test_timeout_substitutes_default_and_steps(self):
        h = self.make()
        tick = h.core.tick
        h.submit("t1", tick, 1)
        h.advance(1000)  # past both deadlines
        assert h.core.tick == tick + 1
        assert set(h.core.missing_roles()) == {"alpha", "beta"}  # fresh barrier

    def test_timeout_event_accounting(self, tmp_path):
        h = CoreHarness(TWO_HUMANS, 5, log_path=tmp_path / "log.jsonl")
        h.join("t1", "p1")
        h.join("t2", "p2")
        tick = h.core.tick
        h.submit("t1", tick, 1)
        h.advance(1000)
        h.close()
        from loopstage.events import read_log
        _, events = read_log(tmp_path / "log.jsonl")
        subs = [e for e in events if e.kind == "TimeoutSubstitution"]
        assert len(subs) == 1
        assert subs[0].payload == {"role": "beta", "action": 4}
        assert subs[0].tick == tick

    def test_two_disconnected_ticks_two_substitutions(self, tmp_path):
        h = CoreHarness(TWO_HUMANS, 5, log_path=tmp_path / "log.jsonl")
        h.join("t1", "p1")
        h.join("t2", "p2")
        h.suspend("beta")
        for _ in range(2):
            h.submit("t1", h.core.tick, 1)
            h.advance(1500)
        h.close()
        from loopstage.events import read_log
        _, events = read_log(tmp_path / "log.jsonl")
        subs = [e for e in events if e.kind == "TimeoutSubstitution"
                and e.payload["role"] == "beta"]
        assert len(subs) == 2


class TestLockstepInvariants:
    def test_one_step_broadcast_per_tick(self, tmp_path):
        h = CoreHarness(TEAMING, 11, log_path=tmp_path / "log.jsonl")
        h.join("t1", "p1")
        guard = 0
        while h.core.phase is not ProtocolState.ENDED and guard < 5000:
            guard += 1
            if h.core.phase is ProtocolState.AWAITING_ACTIONS and \
                    "scout_a" in h.core.missing_roles():
                h.submit("t1", h.core.tick, guard % 5)
            else:
                h.advance(50)
        h.close()
        from loopstage.events import read_log
        _, events = read_log(tmp_path / "log.jsonl")
        steps = [e for e in events if e.kind == MessageKind.STEP_BROADCAST.value]
        hashes = [e for e in events if e.kind == "StateHash"]
        assert h.core.phase is ProtocolState.ENDED
        assert len(steps) == h.core.tick
        assert len(hashes) == len(steps)
        assert [e.tick for e in steps] == list(range(h.core.tick))


class TestDelegation:
    def make(self):
        h = CoreHarness(DELEGATION, 3)
        h.join("t1", "p1")
        return h

    def test_grant_effective_next_tick(self):
        h = self.make()
        # Agent-only ticks are paced in the headless condition.
        assert h.core.phase is ProtocolState.AWAITING_ACTIONS
        assert h.core.missing_roles() == []
        h.grant("pilot", "human")
        assert h.core.effective_controller("pilot").controller_kind == "agent"
        tick = h.core.tick
        h.advance(5)  # the paced tick fires; the grant applies at the next barrier
        assert h.core.tick == tick + 1
        assert h.core.effective_controller("pilot").controller_kind == "human"
        assert "pilot" in h.core.missing_roles()

    def test_human_controls_after_grant_then_revoke_restores(self):
        h = self.make()
        h.grant("pilot", "human")
        h.advance(5)
        tick = h.core.tick
        h.submit("t1", tick, 0, role_hint="pilot")
        assert h.core.tick == tick + 1
        assert "pilot" in h.core.missing_roles()  # human still holds the seat
        h.revoke("pilot")
        assert h.core.effective_controller("pilot").controller_kind == "human"
        # The revoke applies at the barrier after this submit's step.
        h.submit("t1", h.core.tick, 0, role_hint="pilot")
        assert h.core.effective_controller("pilot").controller_kind == "agent"
        assert h.core.missing_roles() == []

    def test_unbound_target_rejected(self):
        h = CoreHarness(DELEGATION, 3)  # human never joined
        with pytest.raises(SessionError) as err:
            h.core.resolve_delegation_target("pilot", "human")
        assert err.value.code == "TargetUnbound"

    def test_unknown_role_rejected(self):
        h = self.make()
        with pytest.raises(SessionError) as err:
            h.core.resolve_delegation_target("ghost", "human")
        assert err.value.code == "NoSuchRole"


class TestChannels:
    def make(self):
        h = CoreHarness(TEAMING, 9)
        h.join("t1", "p1")
        return h

    def test_symbol_delivered(self):
        h = self.make()
        result = h.chat("t1", "team", "E", tick=h.core.tick)
        outs = [o for o in result.outbound if o.kind is MessageKind.CHANNEL_MSG]
        assert outs and outs[0].payload == {"channel": "team", "content": "E"}

    def test_multi_symbol_rejected(self):
        h = self.make()
        with pytest.raises(SessionError) as err:
            h.core.validate_channel_msg("t1", "team", "NE")
        assert err.value.code == "ChannelViolation"

    def test_undeclared_channel_rejected(self):
        h = self.make()
        with pytest.raises(SessionError):
            h.core.validate_channel_msg("t1", "ghost", "E")

    def test_length_cap(self):
        h = self.make()
        with pytest.raises(SessionError) as err:
            h.core.validate_channel_msg("t1", "team", "X" * 2000)
        assert err.value.code == "ChannelViolation"


class TestAnnotationCredit:
    def test_annotation_shapes_matured_update(self, tmp_path):
        h = CoreHarness(ANNOTATION, 21, log_path=tmp_path / "log.jsonl")
        h.join("t1", "p1")
        # Pacing: one tick every 2ms. Advance one tick, annotate within window.
        h.advance(2)
        assert h.core.tick == 1
        h.annotate("t1", 1, tick=0)
        # Mature the step: window is 1500ms.
        h.advance(2000)
        h.close()
        from loopstage.events import read_log
        _, events = read_log(tmp_path / "log.jsonl")
        annotated = [e for e in events if e.kind == "LearnerUpdate"
                     and e.payload.get("annotations")]
        assert annotated
        first = annotated[0]
        assert first.payload["annotations"] == 1
        base = [e for e in events if e.kind == MessageKind.STEP_BROADCAST.value
                and e.tick == first.tick][0]
        env_reward = base.payload["rewards"]["learner"][0]
        assert first.payload["reward"] == pytest.approx(env_reward + 0.5)

    def test_stale_annotation_uncredited(self, tmp_path):
        h = CoreHarness(ANNOTATION, 22, log_path=tmp_path / "log.jsonl")
        h.join("t1", "p1")
        h.advance(2)
        h.advance(3000)  # way past the window before annotating
        result = h.annotate("t1", 1, tick=0)
        logged = [p for k, _, p in result.logged
                  if k == MessageKind.REWARD_ANNOTATION.value]
        assert logged[0]["credited_tick"] is None
        h.close()


class TestPreferences:
    def run_one_episode(self):
        h = CoreHarness(UTILITY, 31)
        h.join("t1", "p1")
        h.advance(10)  # fallback policy is instant; first episode ends
        return h

    def test_query_issued_after_episode_with_items(self):
        h = self.run_one_episode()
        queries = h.frames_of(MessageKind.PREF_QUERY)
        assert len(queries) == 1
        items = queries[0].payload["items"]
        assert len(items) == 3
        assert all("frames" in it for it in items)

    def test_three_item_ranking_yields_two_pairs(self):
        h = self.run_one_episode()
        query = h.frames_of(MessageKind.PREF_QUERY)[0]
        ids = [it["item_id"] for it in query.payload["items"]]
        h.respond_pref("t1", query.payload["query_id"], list(reversed(ids)))
        assert len(h.core.pref_pairs) == 2
        assert h.core.reward_model is not None

    def test_invalid_ranking_rejected(self):
        h = self.run_one_episode()
        query = h.frames_of(MessageKind.PREF_QUERY)[0]
        ids = [it["item_id"] for it in query.payload["items"]]
        with pytest.raises(SessionError) as err:
            h.core.validate_pref_response("t1", query.payload["query_id"],
                                          [ids[0], ids[0], ids[1]])
        assert err.value.code == "InvalidRanking"

    def test_unknown_query_rejected(self):
        h = self.run_one_episode()
        with pytest.raises(SessionError) as err:
            h.core.validate_pref_response("t1", "q999", [])
        assert err.value.code == "UnknownQuery"

    def test_follower_adopts_top_ranked_policy(self):
        h = self.run_one_episode()
        query = h.frames_of(MessageKind.PREF_QUERY)[0]
        items = query.payload["items"]
        best = max(items, key=lambda it: it["returns"][0])
        ranking = [best["item_id"]] + [i["item_id"] for i in items
                                       if i["item_id"] != best["item_id"]]
        h.respond_pref("t1", query.payload["query_id"], ranking)
        h.run_to_completion(step_ms=100)
        assert h.core.phase is ProtocolState.ENDED
        last = h.core.trajectories[-1]
        assert last.total_return == tuple(best["returns"])


class TestResume:
    def test_snapshot_matches_session_tick(self):
        h = CoreHarness(TEAMING, 51)
        h.join("t1", "p1")
        h.submit("t1", h.core.tick, 1)
        h.suspend("scout_a")
        result = h.join("t1", "p1")  # same token resumes
        acks = [o for o in result.outbound if o.kind is MessageKind.JOIN_ACK]
        assert acks and acks[0].payload["resumed"] is True
        assert acks[0].payload["snapshot"]["tick"] == h.core.tick
        assert not h.core.bindings["scout_a"].suspended

    def test_resume_with_unknown_token_rejected(self):
        h = CoreHarness(TEAMING, 51)
        h.join("t1", "p1")
        with pytest.raises(SessionError) as err:
            h.core.validate_join("t2", "teaming-coverage", "p2", None)
        assert err.value.code == "SessionFull"


class TestSessionEnd:
    def test_completion_codes_minted_per_human(self):
        h = CoreHarness(TEAMING, 61)
        h.join("t1", "p1")
        h.run_to_completion()
        assert h.core.phase is ProtocolState.ENDED
        from loopstage.config import verify_completion_code
        code = h.core.completion_codes["scout_a"]
        assert verify_completion_code(code, "teaming-coverage", "p1",
                                      "teaming-coverage-secret")

    def test_admin_end_mid_session(self):
        h = CoreHarness(TEAMING, 62)
        h.join("t1", "p1")
        h.end("admin")
        assert h.core.phase is ProtocolState.ENDED

    def test_rng_cursor_counts_agent_draws(self):
        h = CoreHarness(ANNOTATION, 63)
        before = h.core.rng_cursor
        h.join("t1", "p1")
        h.advance(10)
        assert h.core.rng_cursor > before
