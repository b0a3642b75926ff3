#!/usr/bin/env python3
"""Paired-seed study: does simulated optimal annotation speed up maze learning?

For each seed, train one shaped and one unshaped learner from identical RNG
streams and compare episodes-to-first-success. Prints the pair table, medians,
and a one-sided sign test.
"""

import argparse
import math
import statistics

from loopstage.agents import QTable, run_episodes
from loopstage.envs import GridMaze
from loopstage.envs.maze import DELTAS, shortest_path
from loopstage.rng import SplitMix64


def bfs_annotator(env: GridMaze):
    def annotate(state, action) -> int:
        cur = tuple(state)
        path = shortest_path(env.passages, env.width, env.height, cur, env.goal)
        if len(path) >= 2:
            dx, dy = DELTAS[action]
            if (cur[0] + dx, cur[1] + dy) == path[1]:
                return 1
        return -1
    return annotate


def first_success(env, stream, annotator=None, beta=0.5, episodes=60) -> int:
    q = QTable(alpha=0.5, gamma=0.99, epsilon=0.1)
    for i, result in enumerate(run_episodes(env, q, episodes, stream,
                                            annotator=annotator, beta=beta)):
        if result.terminated:
            return i
    return episodes


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--size", type=int, default=5)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--beta", type=float, default=0.5)
    args = parser.parse_args()

    shaped, unshaped = [], []
    print(f"{'seed':>4}  {'shaped':>6}  {'unshaped':>8}")
    for seed in range(args.seeds):
        oracle_env = GridMaze(args.size, args.size, seed)
        u = first_success(GridMaze(args.size, args.size, seed),
                          SplitMix64(seed * 31 + 1))
        s = first_success(GridMaze(args.size, args.size, seed),
                          SplitMix64(seed * 31 + 1),
                          annotator=bfs_annotator(oracle_env), beta=args.beta)
        shaped.append(s)
        unshaped.append(u)
        print(f"{seed:>4}  {s:>6}  {u:>8}")

    wins = sum(s < u for s, u in zip(shaped, unshaped))
    losses = sum(u < s for s, u in zip(shaped, unshaped))
    n = wins + losses
    p = sum(math.comb(n, k) for k in range(wins, n + 1)) / 2 ** n if n else 1.0
    print(f"\nmedian episodes-to-first-success: shaped {statistics.median(shaped)}, "
          f"unshaped {statistics.median(unshaped)}")
    print(f"sign test: {wins} wins / {losses} losses, one-sided p = {p:.2e}")
    return 0 if p < 0.05 else 1


if __name__ == "__main__":
    raise SystemExit(main())
