"""Seed derivation for reproducible parallel experiments.

Task ``(g, r)`` (grid point ``g``, replicate ``r``) under master seed ``s`` uses

    mix(s, g, r) = splitmix64(splitmix64(s) XOR (g * 2**32 + r))

with all arithmetic modulo 2**64. ``splitmix64`` is a bijection, so for a fixed
master seed distinct ``(g, r)`` pairs with ``0 <= g, r < 2**32`` always receive
distinct seeds.
"""
from __future__ import annotations

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix(master: int, g: int, r: int) -> int:
    if not (0 <= g < 1 << 32 and 0 <= r < 1 << 32):
        raise ValueError("grid and replicate indices must fit in 32 bits")
    return splitmix64(splitmix64(master & MASK64) ^ ((g << 32) | r))
