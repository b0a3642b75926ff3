"""Blending timed human annotations into the learner's reward."""

from __future__ import annotations

from typing import Optional, Sequence

DEFAULT_WINDOW_MS = 1500
DEFAULT_BETA = 0.5


def shape_reward(env_reward: float, annotations: Sequence, beta: float,
                 window_ms: int) -> float:
    """env_reward + beta * sum of annotation values within the window.

    annotations: (value in {-1, +1}, latency_ms) pairs, latency measured from
    the step broadcast to the annotation's server receipt. window_ms <= 0
    admits only zero-latency annotations (used by simulated annotators).
    """
    credit = sum(v for v, latency in annotations if latency <= window_ms)
    return env_reward + beta * credit


def credit_tick(broadcast_times: dict, recv_ms: int, window_ms: int) -> Optional[int]:
    """Which step an annotation credits: the most recent broadcast at or before
    recv_ms, provided it is within window_ms; None when stale or too early."""
    best_tick = None
    best_time = None
    for tick, sent_ms in broadcast_times.items():
        if sent_ms <= recv_ms and (best_time is None or sent_ms > best_time
                                   or (sent_ms == best_time and tick > best_tick)):
            best_tick, best_time = tick, sent_ms
    if best_tick is None or recv_ms - best_time > window_ms:
        return None
    return best_tick
