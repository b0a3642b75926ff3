#!/usr/bin/env python3
"""Train tabular Q-learning on seeded mazes and compare with the BFS optimum."""

import argparse

from loopstage.agents import QTable, greedy_rollout, run_episodes
from loopstage.envs import GridMaze
from loopstage.rng import SplitMix64


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", type=int, nargs="+", default=[3, 4, 5])
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--alpha", type=float, default=0.5)
    parser.add_argument("--gamma", type=float, default=0.99)
    parser.add_argument("--epsilon", type=float, default=0.1)
    args = parser.parse_args()

    all_ok = True
    for size in args.sizes:
        wins = 0
        for seed in range(args.seeds):
            env = GridMaze(size, size, seed)
            optimal = 1.0 - 0.01 * (len(env.optimal_path()) - 1)
            q = QTable(alpha=args.alpha, gamma=args.gamma, epsilon=args.epsilon)
            run_episodes(env, q, episodes=300 * size, stream=SplitMix64(seed * 1000 + 7))
            rollout = greedy_rollout(env, q, seed=0, max_steps=4 * size * size)
            hit = rollout.terminated and abs(rollout.undiscounted_return - optimal) < 1e-12
            wins += hit
            mark = "=" if hit else "!"
            print(f"{size}x{size} seed {seed}: greedy {rollout.undiscounted_return:+.2f} "
                  f"{mark} optimal {optimal:+.2f}")
        print(f"{size}x{size}: {wins}/{args.seeds} seeds at the BFS optimum\n")
        all_ok &= wins >= args.seeds - 1
    return 0 if all_ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
