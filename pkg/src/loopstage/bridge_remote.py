"""Reference bridge remote: serves a native environment over stdio JSONL.

Run as `python -m loopstage.bridge_remote --env grid_maze --params '{...}'`.
The --sabotage flag deliberately breaks one contract at a time so the
conformance suite has something to catch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .envs import SpaceViolation, SteppedAfterEnd, make_env


def serve(env_id: str, params: dict, sabotage: str = "none",
          stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    env = make_env(env_id, params)
    nondet_counter = 0

    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            req_id = request["id"]
            kind = request["kind"]
            payload = request.get("payload", {})
        except (json.JSONDecodeError, KeyError):
            continue

        def reply(kind: str, payload: dict) -> None:
            stdout.write(json.dumps({"id": req_id, "kind": kind, "payload": payload},
                                    separators=(",", ":")) + "\n")
            stdout.flush()

        if kind == "Hello":
            reply("HelloAck", {"capabilities": env.capabilities.to_json()})
        elif kind == "Reset":
            obs = env.reset(int(payload["seed"]))
            if sabotage == "nondet_reset":
                nondet_counter += 1
                obs = tuple(tuple(x + nondet_counter for x in o) for o in obs)
            reply("ResetResult", {"observations": [list(o) for o in obs]})
        elif kind == "Step":
            joint = payload["joint_action"]
            try:
                if sabotage == "accept_bad_action":
                    joint = [min(max(a, 0), s.n - 1)
                             for a, s in zip(joint, env.capabilities.action_spaces)]
                if sabotage == "step_after_end" and env.state_dict().get("done"):
                    reply("StepResult", {
                        "observations": [list(o) for o in env.reset(0)],
                        "rewards": [[0.0] * env.capabilities.reward_dims
                                    for _ in range(env.capabilities.num_controllers)],
                        "terminated": False, "truncated": False, "info": {}})
                    continue
                outcome = env.step(tuple(joint))
                reply("StepResult", outcome.to_json())
            except (SpaceViolation, SteppedAfterEnd) as exc:
                reply("EnvError", {"message": f"{type(exc).__name__}: {exc}"})
        elif kind == "Render":
            reply("RenderResult", {"frame": env.render().to_json()})
        elif kind == "Close":
            reply("EnvError", {"message": "closing"})
            break
        else:
            reply("EnvError", {"message": f"unknown request kind {kind!r}"})


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="serve a native env over stdio")
    parser.add_argument("--env", required=True)
    parser.add_argument("--params", default="{}")
    parser.add_argument("--sabotage", default="none",
                        choices=["none", "nondet_reset", "step_after_end",
                                 "accept_bad_action"])
    args = parser.parse_args(argv)
    serve(args.env, json.loads(args.params), sabotage=args.sabotage)
    return 0


if __name__ == "__main__":
    sys.exit(main())
