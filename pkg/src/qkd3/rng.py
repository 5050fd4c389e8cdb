"""Counter-based random streams and Poisson photon-number sampling.

Every random draw in the package goes through an :class:`RngStream`. A stream
is keyed by ``(seed, stream_id)`` and backed by numpy's Philox counter-based
generator, so the sample sequence depends only on the key. Parallel work is
split into substreams derived from the key, never by sharing one generator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1

# Below this mean the sampler uses sequential-search inversion.
INVERSION_LIMIT = 30.0


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _label_to_int(label: int | str) -> int:
    if isinstance(label, str):
        acc = 0xCBF29CE484222325
        for byte in label.encode():
            acc = ((acc ^ byte) * 0x100000001B3) & _MASK64
        return acc
    return int(label) & _MASK64


@dataclass
class RngStream:
    """A reproducible random stream selected by ``(seed, stream_id)``.

    Two streams with the same key produce the same samples on any host and
    under any worker count. Use :meth:`child` to derive independent
    substreams for blocks of work.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        self.seed = int(self.seed)
        self.stream_id = int(self.stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, *labels: int | str) -> "RngStream":
        """Return the substream addressed by ``labels`` under this stream."""
        sid = self.stream_id
        for label in labels:
            sid = _splitmix64(sid ^ _splitmix64(_label_to_int(label)))
        return RngStream(self.seed, sid)

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def uniform_angle(self, size=None) -> np.ndarray:
        return self._gen.random(size) * (2.0 * math.pi)

    def turns(self, size: int) -> np.ndarray:
        """Uniform 64-bit fixed-point angles (2**64 == one full turn)."""
        return self._gen.integers(0, _MASK64, size=size, dtype=np.uint64, endpoint=True)

    def poisson(self, lam) -> np.ndarray:
        return sample_poisson(lam, self)

    def binomial(self, n, p) -> np.ndarray:
        return self._gen.binomial(n, p)

    def normal(self, scale, size=None) -> np.ndarray:
        return self._gen.normal(0.0, scale, size)


def _inversion(lam: np.ndarray, u: np.ndarray, first: int, p_first: np.ndarray) -> np.ndarray:
    """Sequential-search inversion starting at count ``first``.

    ``p_first`` is the probability of ``first``; successive terms follow the
    Poisson recurrence p(k) = p(k-1) * lam / k.
    """
    out = np.full(lam.shape, first, dtype=np.int64)
    p = p_first.astype(np.float64, copy=True)
    cdf = p.copy()
    active = u > cdf
    k = first
    k_max = int(math.ceil(float(lam.max(initial=0.0)) + 40.0 * math.sqrt(float(lam.max(initial=0.0))) + 60.0))
    while active.any():
        k += 1
        if k > k_max:
            # cdf rounding below u; the remaining tail mass is far below 1e-16
            out[active] = k - 1
            break
        p = p * lam / k
        cdf = cdf + p
        hit = active & (u <= cdf)
        out[hit] = k
        active &= ~hit
    return out


def sample_poisson(lam, rng: RngStream) -> np.ndarray:
    """Draw Poisson counts with (array) means ``lam``.

    Means below 30 use inversion by sequential search, which is exact at the
    small means this package cares about. Larger means go to numpy's
    transformed-rejection sampler.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("Poisson mean must be finite and non-negative")
    shape = lam.shape
    flat = lam.ravel()
    out = np.zeros(flat.shape, dtype=np.int64)
    u = rng.random(flat.shape)
    small = flat < INVERSION_LIMIT
    if small.any():
        ls = flat[small]
        out[small] = _inversion(ls, u[small], 0, np.exp(-ls))
    big = ~small
    if big.any():
        out[big] = rng.generator.poisson(flat[big])
    return out.reshape(shape)


def sample_poisson_nonzero(lam, rng: RngStream) -> np.ndarray:
    """Draw from Poisson(``lam``) conditioned on a non-zero outcome.

    Equivalent to redrawing on zero, but costs one pass even when ``lam`` is
    tiny. Every mean must be strictly positive.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise ValueError("conditioned Poisson mean must be finite and positive")
    shape = lam.shape
    flat = lam.ravel()
    out = np.zeros(flat.shape, dtype=np.int64)
    u = rng.random(flat.shape)
    small = flat < INVERSION_LIMIT
    if small.any():
        ls = flat[small]
        # P(1 | n >= 1) = lam e^-lam / (1 - e^-lam) = lam / expm1(lam)
        out[small] = _inversion(ls, u[small], 1, ls / np.expm1(ls))
    big = np.flatnonzero(~small)
    while big.size:
        draw = rng.generator.poisson(flat[big])
        out[big] = draw
        big = big[draw == 0]
    return out.reshape(shape)
