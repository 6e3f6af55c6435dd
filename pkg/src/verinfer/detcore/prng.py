"""Fixed-seed generator used for decoding and toy-model weight generation.

xoshiro256++ (Blackman & Vigna) with its state expanded from a 64-bit seed by
splitmix64. Both are defined purely in terms of 64-bit integer arithmetic, so
the k-th output for a given seed is identical on every platform.

Constants:
    splitmix64 increment   0x9E3779B97F4A7C15
    splitmix64 multipliers 0xBF58476D1CE4E5B9, 0x94D049BB133111EB
    xoshiro256++ output    rotl(s0 + s3, 23) + s0
    xoshiro256++ update    t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2;
                           s0 ^= s3; s2 ^= t; s3 = rotl(s3, 45)
"""

from __future__ import annotations

from dataclasses import dataclass

MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns (output, next_state)."""
    x = (x + _GOLDEN) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31), x


@dataclass(frozen=True)
class PrngState:
    """Immutable xoshiro256++ state; ``next`` returns a new state."""

    s: tuple[int, int, int, int]
    steps: int = 0

    def __post_init__(self) -> None:
        if len(self.s) != 4 or any(not 0 <= w <= MASK64 for w in self.s):
            raise ValueError("state must be four unsigned 64-bit words")
        if not any(self.s):
            raise ValueError("all-zero state is a fixed point of xoshiro256++")

    @classmethod
    def from_seed(cls, seed: int) -> PrngState:
        if not 0 <= seed <= MASK64:
            raise ValueError(f"seed {seed} is not an unsigned 64-bit integer")
        words = []
        x = seed
        for _ in range(4):
            out, x = splitmix64(x)
            words.append(out)
        return cls(tuple(words))

    def next(self) -> tuple[int, PrngState]:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        return result, PrngState((s0, s1, s2, s3), self.steps + 1)

    def next_unit(self) -> tuple[float, PrngState]:
        """Uniform double in [0, 1) from the top 53 bits of one output."""
        v, nxt = self.next()
        return (v >> 11) * (1.0 / (1 << 53)), nxt


def uniform_f32_block(state: PrngState, count: int) -> tuple[list[float], PrngState]:
    """``count`` floats in [0, 1) with 24-bit resolution (exact in float32).

    Same stream as calling ``next`` ``count`` times, unrolled for speed.
    """
    s0, s1, s2, s3 = state.s
    out = []
    for _ in range(count):
        r = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
        out.append((r >> 40) * (1.0 / (1 << 24)))
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    return out, PrngState((s0, s1, s2, s3), state.steps + count)
