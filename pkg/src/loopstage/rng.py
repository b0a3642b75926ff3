"""Counter-based randomness with labeled seed derivation.

All randomness in a session flows through SplitMix64 streams whose state is
(seed, draw count). The draw count is the only mutable part, which makes RNG
state trivially hashable and replayable.
"""

from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, label: str) -> int:
    """Derive an independent 64-bit stream seed from a master seed and label."""
    key = (master_seed & MASK64).to_bytes(8, "little")
    digest = hashlib.blake2b(label.encode("utf-8"), key=key, digest_size=8).digest()
    return int.from_bytes(digest, "little")


class SplitMix64:
    """Counter-based PRNG: draw i is a pure function of (seed, i)."""

    __slots__ = ("seed", "count")

    def __init__(self, seed: int, count: int = 0):
        self.seed = seed & MASK64
        self.count = count

    def next_u64(self) -> int:
        self.count += 1
        return _mix((self.seed + self.count * _GAMMA) & MASK64)

    def next_float(self) -> float:
        """Uniform draw in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return int(self.next_float() * n)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def state_dict(self) -> dict:
        return {"seed": self.seed, "count": self.count}

    def __repr__(self) -> str:
        return f"SplitMix64(seed={self.seed:#x}, count={self.count})"
