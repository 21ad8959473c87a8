"""Deterministic per-item random streams.

Every piece of randomness in the package flows through ``RngStream``, a
PCG32 generator (the "XSH RR 64/32" setseq variant): 64-bit LCG state,
32-bit output, multiplier 6364136223846793005, increment derived from the
stream index as ``(index << 1) | 1``. Pure Python integer arithmetic, so a
given (seed, index) pair produces the same byte stream on every platform.

Streams are keyed by (global_seed, item_index) so data generation is
order-independent: item 7 gets the same draws whether it is produced
first, last, or in a worker process.
"""

from collections.abc import Sequence
from typing import TypeVar

_MULT = 6364136223846793005
_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1

# Purpose tags folded into the stream index by stream_index(); keeping the
# purposes disjoint guarantees e.g. batch-order draws never collide with
# per-sentence perturbation draws.
SPLIT = 1
EXAMPLES = 2
PAIRS = 3
ORDER = 4
VALID = 5
INIT = 6
PROBE = 7
TOY = 8
GRADCHECK = 9

T = TypeVar("T")


def stream_index(purpose: int, epoch: int = 0, item: int = 0) -> int:
    """Pack (purpose, epoch, item) into one 64-bit stream index."""
    return ((purpose & 0xFFFF) << 48) | ((epoch & 0xFFFF) << 32) | (item & _MASK32)


class RngStream:
    """PCG32 stream seeded from (global_seed, item_index)."""

    __slots__ = ("_state", "_inc")

    def __init__(self, seed: int, index: int = 0):
        self._inc = (((index & _MASK64) << 1) | 1) & _MASK64
        self._state = 0
        self.next_u32()
        self._state = (self._state + (seed & _MASK64)) & _MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self._state
        self._state = (old * _MULT + self._inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((32 - rot) & 31))) & _MASK32

    def random(self) -> float:
        """Uniform float in [0, 1) with 32-bit resolution."""
        return self.next_u32() * 2.0**-32

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, bound: int) -> int:
        """Uniform integer in [0, bound); unbiased via rejection."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        limit = (1 << 32) - ((1 << 32) % bound)
        while True:
            r = self.next_u32()
            if r < limit:
                return r % bound

    def choice(self, seq: Sequence[T]) -> T:
        return seq[self.randint(len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, seq: Sequence[T], k: int) -> list[T]:
        """k distinct elements, drawn without replacement."""
        n = len(seq)
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} from {n} items")
        arr = list(seq)
        for i in range(k):
            j = i + self.randint(n - i)
            arr[i], arr[j] = arr[j], arr[i]
        return arr[:k]


def stream(seed: int, purpose: int, epoch: int = 0, item: int = 0) -> RngStream:
    """RngStream keyed by (seed, packed purpose/epoch/item index)."""
    return RngStream(seed, stream_index(purpose, epoch, item))
