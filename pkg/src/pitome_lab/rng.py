"""Portable counter-based random number generation.

Every stochastic component of the library draws from SplitMix64, a named
64-bit counter-based generator (output i is a fixed bit-mix of
``seed + i * GOLDEN_GAMMA``), so any implementation in any language
reproduces the exact stream from the same seed.  Uniform doubles take the
top 53 bits of each output; gaussians come from Box-Muller on consecutive
uniforms.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Fold integers into a single 64-bit stream seed.

    Used to give every (experiment, point, retry) combination its own
    reproducible SplitMix64 stream.
    """
    acc = 0x8BADF00D5EED5EED
    for p in parts:
        acc = _mix((acc + (p & _MASK) * GOLDEN_GAMMA) & _MASK)
    return acc


class SplitMix64:
    """Deterministic 64-bit generator with uniform and gaussian output."""

    def __init__(self, seed: int):
        self._state = seed & _MASK
        self._spare: float | None = None

    def next_uint64(self) -> int:
        self._state = (self._state + GOLDEN_GAMMA) & _MASK
        return _mix(self._state)

    def next_double(self) -> float:
        # 53-bit mantissa in [0, 1)
        return (self.next_uint64() >> 11) * (1.0 / (1 << 53))

    def next_gaussian(self) -> float:
        if self._spare is not None:
            z = self._spare
            self._spare = None
            return z
        # Box-Muller; u1 = 0 would take log(0), shift into (0, 1]
        u1 = 1.0 - self.next_double()
        u2 = self.next_double()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare = r * math.sin(theta)
        return r * math.cos(theta)

    def gaussians(self, n: int) -> np.ndarray:
        return np.array([self.next_gaussian() for _ in range(n)])

    def gaussian_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.gaussians(rows * cols).reshape(rows, cols)
