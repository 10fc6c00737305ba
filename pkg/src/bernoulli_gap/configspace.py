"""Bit-packed occupancy configurations and fixed-particle-number state spaces.

Site ``i`` is bit ``i`` of an integer mask. Spaces with a fixed particle
number are indexed by the colexicographic combinatorial number system,
which coincides with sorting the masks numerically.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np

MAX_SITES = 62


@dataclass(frozen=True)
class Configuration:
    bits: int
    n_sites: int

    def __post_init__(self):
        if self.bits < 0 or self.bits >> self.n_sites:
            raise ValueError(f"mask {self.bits:#x} does not fit in {self.n_sites} sites")

    @classmethod
    def from_string(cls, s: str) -> "Configuration":
        if set(s) - {"0", "1"}:
            raise ValueError(f"configuration string must be 0/1, got {s!r}")
        return cls(sum(1 << i for i, c in enumerate(s) if c == "1"), len(s))

    @classmethod
    def from_occupancy(cls, occ) -> "Configuration":
        occ = np.asarray(occ).astype(bool)
        return cls(int(np.sum(1 << np.flatnonzero(occ).astype(object), initial=0)), occ.size)

    @property
    def N(self) -> int:
        return bin(self.bits).count("1")

    def __getitem__(self, x: int) -> int:
        return (self.bits >> x) & 1

    def occupancy(self) -> np.ndarray:
        return np.array([(self.bits >> i) & 1 for i in range(self.n_sites)], dtype=np.int8)

    def __str__(self) -> str:
        return "".join(str((self.bits >> i) & 1) for i in range(self.n_sites))


def _check_sites(eta: Configuration, *sites: int) -> None:
    for x in sites:
        if not 0 <= x < eta.n_sites:
            raise ValueError(f"site {x} outside configuration of {eta.n_sites} sites")


def apply_swap(eta: Configuration, x: int, y: int) -> Configuration:
    """Exchange the occupancies of sites ``x`` and ``y``."""
    _check_sites(eta, x, y)
    if x == y:
        warnings.warn(f"swap of site {x} with itself is the identity", stacklevel=2)
        return eta
    if eta[x] == eta[y]:
        return eta
    return Configuration(eta.bits ^ ((1 << x) | (1 << y)), eta.n_sites)


def apply_flip(eta: Configuration, x: int) -> Configuration:
    _check_sites(eta, x)
    return Configuration(eta.bits ^ (1 << x), eta.n_sites)


def _colex_masks(n: int, k: int) -> np.ndarray:
    # layer[j] holds the j-subsets of the first m sites, in increasing mask order
    layer = [np.zeros(1, dtype=np.int64)] + [np.zeros(0, dtype=np.int64)] * k
    for m in range(n):
        top = np.int64(1) << np.int64(m)
        for j in range(min(k, m + 1), 0, -1):
            layer[j] = np.concatenate([layer[j], layer[j - 1] | top])
    return layer[k]


class ConfigSpace:
    """All configurations of ``n_sites`` sites with ``N`` particles.

    ``N=None`` gives the full space ``{0,1}^n`` indexed by the mask itself.
    """

    def __init__(self, n_sites: int, N: int | None):
        if not 1 <= n_sites <= MAX_SITES:
            raise ValueError(f"n_sites must be in 1..{MAX_SITES}, got {n_sites}")
        if N is not None and not 0 <= N <= n_sites:
            raise ValueError(f"particle number {N} outside 0..{n_sites}")
        self.n_sites = n_sites
        self.N = N
        self._binom = np.array([[comb(n, k) for k in range(n_sites + 2)]
                                for n in range(n_sites + 1)], dtype=np.int64)

    @property
    def fixed_n(self) -> bool:
        return self.N is not None

    @property
    def size(self) -> int:
        return comb(self.n_sites, self.N) if self.fixed_n else 1 << self.n_sites

    def __len__(self) -> int:
        return self.size

    @property
    def degenerate(self) -> bool:
        return self.size == 1

    def same_as(self, other: "ConfigSpace") -> bool:
        return self.n_sites == other.n_sites and self.N == other.N

    @cached_property
    def states(self) -> np.ndarray:
        """Masks of every state, in rank order."""
        if not self.fixed_n:
            return np.arange(1 << self.n_sites, dtype=np.int64)
        out = _colex_masks(self.n_sites, self.N)
        out.setflags(write=False)
        return out

    @cached_property
    def occupancy(self) -> np.ndarray:
        """``(size, n_sites)`` 0/1 matrix of all states."""
        shifts = np.arange(self.n_sites, dtype=np.int64)
        return ((self.states[:, None] >> shifts) & 1).astype(np.int8)

    def rank(self, eta: Configuration | int) -> int:
        bits, n = (eta.bits, eta.n_sites) if isinstance(eta, Configuration) else (int(eta), self.n_sites)
        if n != self.n_sites:
            raise ValueError(f"configuration has {n} sites, space has {self.n_sites}")
        if not self.fixed_n:
            return bits
        if bin(bits).count("1") != self.N:
            raise ValueError(f"configuration does not have {self.N} particles")
        r, i = 0, 0
        for c in range(self.n_sites):
            if (bits >> c) & 1:
                i += 1
                r += int(self._binom[c, i])
        return r

    def rank_many(self, masks: np.ndarray) -> np.ndarray:
        """Vectorized rank of an array of masks (particle counts not rechecked)."""
        masks = np.asarray(masks, dtype=np.int64)
        if not self.fixed_n:
            return masks.copy()
        r = np.zeros(masks.shape, dtype=np.int64)
        count = np.zeros(masks.shape, dtype=np.int64)
        for c in range(self.n_sites):
            bit = (masks >> c) & 1
            count += bit
            r += bit * self._binom[c, count]
        return r

    def unrank(self, index: int) -> Configuration:
        if not 0 <= index < self.size:
            raise IndexError(f"index {index} outside 0..{self.size - 1}")
        if not self.fixed_n:
            return Configuration(int(index), self.n_sites)
        bits, r = 0, int(index)
        for i in range(self.N, 0, -1):
            c = i - 1
            while c + 1 < self.n_sites and self._binom[c + 1, i] <= r:
                c += 1
            r -= int(self._binom[c, i])
            bits |= 1 << c
        return Configuration(bits, self.n_sites)

    def __iter__(self):
        for m in self.states:
            yield Configuration(int(m), self.n_sites)
