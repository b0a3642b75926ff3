"""Command line entry points: serve, replay, export, pareto, bridge-check."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def _cmd_serve(args) -> int:
    from .server import serve
    serve(args.config, port=args.port, log_dir=args.logs, base_seed=args.seed,
          ui_dir=args.ui_dir, host=args.host)
    return 0


def _cmd_replay(args) -> int:
    from .events import CorruptLog, HashMismatch
    from .replay import replay
    try:
        result = replay(args.log)
    except HashMismatch as exc:
        print(f"FAIL {exc}")
        return 1
    except CorruptLog as exc:
        print(f"FAIL corrupt log: {exc}")
        return 1
    if args.verify:
        if result.ok:
            print(f"OK {result.session_id}: {result.ticks_checked} ticks verified")
            return 0
        print(f"FAIL {result.session_id}: first divergence at tick "
              f"{result.first_divergence}")
        return 1
    for tick, digest in result.recomputed:
        print(f"{tick}\t{digest:#018x}")
    return 0


def _cmd_export(args) -> int:
    from .replay import export_trajectories
    trajectories = export_trajectories(args.log)
    out = Path(args.trajectories)
    with out.open("w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(json.dumps(traj.to_json(), separators=(",", ":")) + "\n")
    print(f"wrote {len(trajectories)} trajectories to {out}")
    return 0


def _cmd_pareto(args) -> int:
    from .agents.pareto import enumerate_pareto_front
    from .envs import DeepSeaTreasure
    env = DeepSeaTreasure(fixture=args.fixture)
    front = enumerate_pareto_front(env, horizon=args.horizon)
    for entry in front.entries:
        returns = ",".join(repr(r) for r in entry.returns)
        actions = ",".join(str(a) for a in entry.actions)
        print(f"{returns}\t{actions}")
    return 0


def _cmd_bridge_check(args) -> int:
    from .bridge import BridgeHandle, conformance_suite
    handle = BridgeHandle.spawn(args.cmd)
    try:
        handle.handshake()
        report = conformance_suite(handle)
    finally:
        handle.close()
    for check in report.checks:
        print(f"{'PASS' if check.passed else 'FAIL'} {check.name}: {check.detail}")
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="loopstage")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the session server")
    p.add_argument("--config", required=True, help="experiment definition (TOML)")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--logs", default="logs", help="event log directory")
    p.add_argument("--seed", type=int, default=0, help="base seed for minted sessions")
    p.add_argument("--ui-dir", default=None, help="directory of built UI assets")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("replay", help="re-execute a session log")
    p.add_argument("log")
    p.add_argument("--verify", action="store_true",
                   help="exit 0 on full hash match, 1 with first-divergence report")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("export", help="export per-episode trajectories")
    p.add_argument("log")
    p.add_argument("--trajectories", required=True, help="output JSONL path")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("pareto", help="print the Pareto front of a treasure fixture")
    p.add_argument("fixture")
    p.add_argument("--horizon", type=int, default=25)
    p.set_defaults(func=_cmd_pareto)

    p = sub.add_parser("bridge-check", help="run the bridge conformance suite")
    p.add_argument("--cmd", required=True, help="launch command for the remote")
    p.set_defaults(func=_cmd_bridge_check)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
