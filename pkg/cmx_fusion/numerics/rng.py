"""Counter-based SplitMix64 random number generator."""

from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from cmx_fusion.types import Shape, Tensor

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX_MUL_1 = np.uint64(0xBF58476D1CE4E5B9)
MIX_MUL_2 = np.uint64(0x94D049BB133111EB)
SHIFT_1, SHIFT_2, SHIFT_3 = np.uint64(30), np.uint64(27), np.uint64(31)
FLOAT53 = 2.0**-53


def mix64(z: NDArray[np.uint64]) -> NDArray[np.uint64]:
    """SplitMix64 finalizer, wrapping modulo 2**64."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> SHIFT_1)) * MIX_MUL_1
        z = (z ^ (z >> SHIFT_2)) * MIX_MUL_2
    return z ^ (z >> SHIFT_3)


class Rng:
    """Deterministic generator: draw `k` is `mix64(seed + k * GOLDEN_GAMMA)`.

    The state is the pair (seed, counter); identical seeds give identical sequences on every
    platform because only wrapping 64-bit integer arithmetic is involved.
    """

    def __init__(self, seed: int) -> None:
        self.seed = seed & MASK64
        self.counter = 0

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def bits(self, n: int) -> NDArray[np.uint64]:
        """Next `n` raw 64-bit draws."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return mix64(np.uint64(self.seed) + idx * GOLDEN_GAMMA)

    def uniform(self, shape: Shape | int, low: float = 0.0, high: float = 1.0) -> Tensor:
        """Float64 samples in [low, high) with 53 random bits each."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        unit = (self.bits(math.prod(shape)) >> np.uint64(11)).astype(np.float64) * FLOAT53
        return (low + (high - low) * unit).reshape(shape)

    def normal(self, shape: Shape | int) -> Tensor:
        """Standard normal float64 samples (Box-Muller, cosine branch)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = math.prod(shape)
        u1 = 1.0 - self.uniform(n)
        u2 = self.uniform(n)
        return (np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)).reshape(shape)

    def integers(self, low: int, high: int, shape: Shape | int) -> NDArray[np.int64]:
        """Integers in [low, high)."""
        return (low + np.floor(self.uniform(shape) * (high - low))).astype(np.int64)

    def permutation(self, n: int) -> NDArray[np.int64]:
        """Random permutation of `range(n)`."""
        return np.argsort(self.uniform(n), kind="stable")

    def split(self, key: int) -> Rng:
        """Independent child generator, determined by this seed and `key` only."""
        child = mix64(np.array([self.seed ^ (key & MASK64)], dtype=np.uint64) + GOLDEN_GAMMA)
        return Rng(int(child[0]))


def uniform_init(rng: Rng, shape: Shape, fan_in: int) -> Tensor:
    """Float32 weights uniform in +-sqrt(1 / fan_in)."""
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(shape, -bound, bound).astype(np.float32)
