"""Portable, splittable counter-based random numbers.

Every stochastic choice in the package (weight init, wiring, Latin
hypercube, point sampling, data splits) draws from :class:`PortableRNG` so
that a seed reproduces the same numbers on any platform and in any
language that follows the recipe below.

Algorithm
---------
The raw stream is SplitMix64 written in counter form.  With ``key`` the
64-bit stream key and ``i = 1, 2, ...`` the counter, draw ``i`` is::

    z = key + i * 0x9E3779B97F4A7C15            (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9    (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB    (mod 2**64)
    out = z ^ (z >> 31)

which is bit-identical to the classic SplitMix64 sequence seeded with
``key``.  Test vectors (seed 1234567): 6457827717110365317,
3203168211198807973, 9817491932198370423, 4593380528125082431,
16408922859458223821.

Derived quantities:

* ``uniform``: ``(out >> 11) * 2**-53`` in [0, 1).
* ``normal``: Box-Muller cosine branch, one normal per two draws
  ``u1, u2``: ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``.
* ``integers(n)``: ``floor(uniform * n)``.
* ``permutation(n)``: stable argsort of ``n`` raw draws.
* ``spawn(label)``: child key ``mix(key ^ mix(label + GOLDEN))`` where
  ``mix`` is the three-line finalizer above applied to its argument.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _label_int(label) -> int:
    if isinstance(label, str):
        acc = 0xCBF29CE484222325  # FNV-1a 64
        for b in label.encode("utf-8"):
            acc = ((acc ^ b) * 0x100000001B3) & _MASK
        return acc
    return int(label) & _MASK


class PortableRNG:
    """SplitMix64 counter stream with deterministic splitting."""

    def __init__(self, seed: int = 0, counter: int = 0):
        self.key = int(seed) & _MASK
        self.counter = int(counter)

    def __repr__(self):
        return f"PortableRNG(key={self.key:#018x}, counter={self.counter})"

    def spawn(self, label) -> "PortableRNG":
        """Independent child stream; does not advance this stream."""
        child = _mix_int(self.key ^ _mix_int(_label_int(label) + GOLDEN))
        return PortableRNG(child)

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` 64-bit outputs as ``uint64``."""
        n = int(n)
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + idx * np.uint64(GOLDEN)
            return _mix_array(z)

    def uniform(self, size=None, low=0.0, high=1.0):
        shape = () if size is None else size
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(shape)

    def normal(self, size=None, loc=0.0, scale=1.0):
        shape = () if size is None else size
        n = int(np.prod(shape, dtype=np.int64))
        u = self.uniform(2 * n).reshape(2, n) if n else np.zeros((2, 0))
        z = np.sqrt(-2.0 * np.log1p(-u[0])) * np.cos(2.0 * np.pi * u[1])
        z = loc + scale * z
        return float(z[0]) if size is None else z.reshape(shape)

    def integers(self, n: int, size=None):
        u = self.uniform(size if size is not None else (1,))
        k = np.minimum(np.floor(u * n).astype(np.int64), n - 1)
        return int(k[0]) if size is None else k

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.raw(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, in draw order."""
        if k > n:
            raise ValueError(f"cannot choose {k} distinct items from {n}")
        return self.permutation(n)[:k]

    def sign(self, size=None):
        """Uniform +1/-1 values."""
        b = self.integers(2, size)
        return 2 * b - 1
