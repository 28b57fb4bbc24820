"""Counter-based deterministic random numbers (SplitMix64).

The whole simulator draws randomness through this one generator so episode
replay is bit-exact across platforms. State is a single 64-bit integer, which
keeps it trivially serializable and part of the world-state digest. Each
sampled action consumes exactly one documented draw.

Functional API (``next_u64`` / ``next_float``) threads the state explicitly;
the ``SplitMix64`` class is a thin mutable wrapper for planner/generator code.
"""

from __future__ import annotations

from typing import Sequence, TypeVar

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

T = TypeVar("T")


def seed_state(seed: int) -> int:
    """Initial generator state for a user-facing seed."""
    return seed & _MASK64


def next_u64(state: int) -> tuple[int, int]:
    """One SplitMix64 step. Returns (value, new_state)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def next_float(state: int) -> tuple[float, int]:
    """Uniform float in [0, 1) with 53 bits of precision."""
    u, state = next_u64(state)
    return (u >> 11) * 2.0**-53, state


class SplitMix64:
    """Mutable convenience wrapper around the functional generator."""

    def __init__(self, seed: int):
        self.state = seed_state(seed)

    def u64(self) -> int:
        value, self.state = next_u64(self.state)
        return value

    def random(self) -> float:
        value, self.state = next_float(self.state)
        return value

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, n: int) -> int:
        """Integer in [0, n). n must be positive and small (< 2**32)."""
        return self.u64() % n

    def choice(self, seq: Sequence[T]) -> T:
        if not seq:
            raise IndexError("choice from empty sequence")
        return seq[self.randint(len(seq))]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]
