"""Portable seeded random streams.

The generator is SplitMix64 used in counter mode: output ``i`` of a stream
with key ``k`` is ``mix64(k + (i + 1) * 0x9E3779B97F4A7C15)``, where
``mix64`` is the SplitMix64 xor-shift/multiply finalizer. Counter mode makes
block generation vectorizable while keeping the sequence independent of the
block size.

* uniforms: the top 53 bits of each output, scaled to ``[0, 1)``;
* signs: the top bit of each output (1 -> -1, 0 -> +1);
* Gaussians: Marsaglia's polar method on pairs of uniforms mapped to
  ``(-1, 1)``; each accepted pair yields two variates, an odd request
  discards the second variate of its last pair.

Independent sub-streams come from :func:`derive_seed`, which hashes the
master seed together with string/integer tags (BLAKE2b, 8-byte digest), so
adding a new consumer never shifts an existing one.
"""
import hashlib
import math

import numpy as np

from ripkit.errors import ValidationError

ALGORITHM = "splitmix64-ctr"
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix64(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def check_seed(seed):
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= int(seed) <= _MASK64:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def derive_seed(master, *tags):
    """Hash ``master`` and ``tags`` into a new 64-bit seed."""
    master = check_seed(master)
    text = ":".join([str(master)] + [str(t) for t in tags]).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


class RngStream:
    """Stateful stream; not safe to share between threads (use ``spawn``)."""

    algorithm = ALGORITHM

    def __init__(self, seed):
        self.seed = check_seed(seed)
        self.counter = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def spawn(self, *tags):
        return RngStream(derive_seed(self.seed, *tags))

    def _block(self, start, count):
        idx = np.arange(start + 1, start + 1 + count, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * _GOLDEN
        return _mix64(z)

    def next_u64(self, count):
        out = self._block(self.counter, count)
        self.counter += count
        return out

    def uniform(self, count):
        if count < 0:
            raise ValidationError("count must be non-negative")
        return (self.next_u64(count) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def signs(self, count):
        if count < 0:
            raise ValidationError("count must be non-negative")
        top = (self.next_u64(count) >> np.uint64(63)).astype(np.int64)
        return (1 - 2 * top).astype(np.float64)

    def gaussian(self, count):
        if count < 0:
            raise ValidationError("count must be non-negative")
        out = []
        have = 0
        while have < count:
            pairs = max(16, int(1.3 * (count - have) / 2) + 8)
            raw = self._block(self.counter, 2 * pairs)
            u = (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -52 - 1.0
            x, y = u[0::2], u[1::2]
            r2 = x * x + y * y
            ok = (r2 > 0.0) & (r2 < 1.0)
            acc = np.flatnonzero(ok)
            need_pairs = (count - have + 1) // 2
            if acc.size >= need_pairs:
                acc = acc[:need_pairs]
                used = int(acc[-1]) + 1
            else:
                used = pairs
            self.counter += 2 * used
            # math.log/sqrt rather than numpy's SIMD kernels, for bit-portability
            f = np.array([math.sqrt(-2.0 * math.log(s) / s) for s in r2[acc].tolist()])
            vals = np.empty(2 * acc.size)
            vals[0::2] = x[acc] * f
            vals[1::2] = y[acc] * f
            out.append(vals)
            have += vals.size
        return np.concatenate(out)[:count] if out else np.zeros(0)

    def integers(self, high, count):
        """Uniform integers in ``[0, high)`` by rejection (no modulo bias)."""
        if high < 1:
            raise ValidationError("high must be >= 1")
        limit = (1 << 64) - ((1 << 64) % high)
        vals = []
        while len(vals) < count:
            for v in self.next_u64(count - len(vals)).tolist():
                if v < limit:
                    vals.append(v % high)
        return np.array(vals, dtype=np.int64)

    def subset(self, n, k):
        """Uniform random ``k``-subset of ``range(n)``, sorted (Floyd's algorithm)."""
        if not 0 <= k <= n:
            raise ValidationError(f"cannot draw {k} of {n}")
        chosen = set()
        for j in range(n - k, n):
            t = int(self.integers(j + 1, 1)[0])
            chosen.add(j if t in chosen else t)
        return np.array(sorted(chosen), dtype=np.int64)


def rng_gaussian(stream, count):
    return stream.gaussian(count)


def rng_sign(stream, count):
    return stream.signs(count)
