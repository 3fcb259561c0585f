"""Counter-based 64-bit pseudo-random generator for reproducible index streams.

The generator is SplitMix64: the k-th raw output is ``mix(seed + k*GOLDEN)``
with all arithmetic modulo 2**64 and

    GOLDEN = 0x9E3779B97F4A7C15
    mix(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

Uniform draws on ``{0, ..., p-1}`` use rejection sampling below the largest
multiple of p that fits in 64 bits, so every residue is exactly equally
likely (no modulo bias).  The sequence depends only on ``(seed, draw count)``
and is reproducible in any language with 64-bit unsigned arithmetic.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """Stateful wrapper around the SplitMix64 stream for one seed."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK

    def next_u64(self) -> int:
        """Next raw 64-bit output."""
        self._state = (self._state + _GOLDEN) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    def next_below(self, p: int) -> int:
        """Unbiased uniform draw on {0, ..., p-1} via rejection sampling."""
        if p < 1:
            raise ValueError(f"p must be positive, got {p}")
        limit = ((1 << 64) // p) * p
        while True:
            u = self.next_u64()
            if u < limit:
                return u % p
