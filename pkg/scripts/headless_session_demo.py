#!/usr/bin/env python3
"""Record one scripted teaming session without sockets, then verify its replay.

Demonstrates the full deterministic loop: lockstep barrier, chat, a timeout
substitution, the event log, and hash-verified replay of that log.
"""

import argparse
import tempfile
from pathlib import Path

from loopstage import BUILD_ID
from loopstage.config import apply_condition, experiment_hash, load_experiment
from loopstage.core import SessionCore
from loopstage.events import EventLog, FORMAT_VERSION, LogHeader
from loopstage.protocol import ProtocolState
from loopstage.replay import replay

FIXTURES = Path(__file__).resolve().parent.parent / "src" / "loopstage" / "fixtures"


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--log", default=None, help="log path (default: temp file)")
    args = parser.parse_args()

    experiment = apply_condition(load_experiment(FIXTURES / "teaming.toml"), "headless")
    log_path = Path(args.log) if args.log else Path(tempfile.mkstemp(".jsonl")[1])
    core = SessionCore(experiment, args.seed, "demo", BUILD_ID)
    log = EventLog.open(log_path, LogHeader(
        format_version=FORMAT_VERSION, session_id="demo",
        experiment_hash=experiment_hash(experiment), master_seed=args.seed,
        build_id=BUILD_ID))

    wall = 1_000_000

    def commit(result):
        nonlocal wall
        for kind, tick, payload in result.logged:
            log.append(kind, payload, tick, wall)
        return result

    commit(core.bootstrap(wall))
    result = commit(core.ext_join({"role": "scout_a", "token": "demo-token",
                                   "participant_id": "demo", "study_id":
                                   experiment.study_id}, wall))
    commit(core.ext_start_episode({"episode": 0}, wall))

    step = 0
    while core.phase is not ProtocolState.ENDED and step < 3000:
        step += 1
        wall += 40
        if core.phase is ProtocolState.AWAITING_ACTIONS and \
                "scout_a" in core.missing_roles():
            if step % 9 == 0:
                commit(core.ext_channel_msg(
                    {"role": "scout_a", "channel": "team", "content": "N"},
                    core.tick, wall))
            if step % 13 == 0:  # miss one deadline on purpose
                wall += 10_001
                commit(core.ext_timeout_substitution(
                    {"role": "scout_a", "action": 4}, wall))
            else:
                commit(core.ext_act_submit(
                    {"role": "scout_a", "action": step % 5}, core.tick, wall))
        elif core.phase is ProtocolState.BETWEEN_EPISODES:
            commit(core.ext_start_episode({"episode": core.episode}, wall))
    log.close()

    print(f"recorded {core.tick} ticks over {core.episode} episodes -> {log_path}")
    outcome = replay(log_path)
    print(f"replay: {'OK' if outcome.ok else 'DIVERGED'} "
          f"({outcome.ticks_checked} ticks hash-verified)")
    return 0 if outcome.ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
