"""Counter-based pseudo-random generator used for every seeded behavior.

The generator is fixed so that a seed produces the identical stream on any
platform, Python version, or backend. The algorithm is splitmix64 applied
to a 64-bit counter:

    value(seed, i) = mix64((seed + (i + 1) * 0x9E3779B97F4A7C15) mod 2^64)

    mix64(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   (mod 2^64)
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB   (mod 2^64)
        return z ^ (z >> 31)

Derived quantities are defined exactly as:

  * float64 in [0, 1):       (value >> 11) * 2**-53
  * integer in [0, bound):   (value * bound) >> 64   (multiply-high)
  * child stream for tag t:  Rng(mix64(seed XOR mix64(t)))

String tags are reduced to 64 bits via the first 8 bytes of their SHA-256
digest (big-endian), keeping child streams platform-independent.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix64(z):
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z):
    # uint64 arithmetic wraps mod 2^64, matching the scalar path bit-for-bit
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def _tag_to_u64(tag):
    if isinstance(tag, int):
        return tag & _MASK64
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class Rng:
    """Deterministic counter-based stream of 64-bit values.

    State is (seed, counter); every draw advances the counter by the number
    of values consumed, so streams can be reproduced and reasoned about
    positionally.
    """

    def __init__(self, seed, counter=0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)

    def clone(self):
        return Rng(self.seed, self.counter)

    def fork(self, tag):
        """Independent child stream derived from this seed and a tag."""
        return Rng(_mix64(self.seed ^ _mix64(_tag_to_u64(tag))))

    def next_u64(self):
        self.counter += 1
        return _mix64((self.seed + self.counter * _GAMMA) & _MASK64)

    def _u64_block(self, n):
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(_GAMMA)
        return _mix64_array(z)

    def next_uint(self, bound):
        """Integer in [0, bound) via the multiply-high reduction."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        return (self.next_u64() * bound) >> 64

    def next_float(self):
        """float64 in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def floats(self, n):
        """Array of n float64 values in [0, 1)."""
        block = self._u64_block(int(n))
        return (block >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform(self, low, high, shape, dtype=np.float32):
        """Array of the given shape, uniform in [low, high)."""
        shape = tuple(int(s) for s in shape)
        n = int(np.prod(shape)) if shape else 1
        vals = low + (high - low) * self.floats(n)
        return vals.reshape(shape).astype(dtype)

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle of a list (emission form).

        Repeatedly draws a slot uniformly from the remaining items, emits
        it, and moves the last remaining item into the hole. One
        next_uint(k) call per emission, k counting down from len(items)
        to 1. A windowed reservoir with the same seed and a buffer at
        least as long as the stream reproduces this order exactly.
        """
        buf = list(items)
        out = []
        while buf:
            j = self.next_uint(len(buf))
            out.append(buf[j])
            buf[j] = buf[-1]
            buf.pop()
        items[:] = out
        return items
