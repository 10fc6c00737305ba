"""Grand-canonical and canonical inhomogeneous Bernoulli measures.

Every partition sum is carried in log space. The canonical partition
function over the first ``m`` sites with ``n`` particles obeys

    Z[m + 1, n] = Z[m, n] + exp(alpha_m) * Z[m, n - 1],

which is accumulated with ``logaddexp``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import lgamma
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .configspace import ConfigSpace, Configuration
from .disorder import DisorderField
from .lattice import LatticeGeometry


def log_binom(n: int, k: int) -> float:
    return lgamma(n + 1) - lgamma(k + 1) - lgamma(n - k + 1)


def _prefix_table(alpha: np.ndarray, N: int) -> np.ndarray:
    n_sites = alpha.size
    table = np.full((n_sites + 1, N + 1), -np.inf)
    table[0, 0] = 0.0
    for m in range(n_sites):
        table[m + 1] = table[m]
        table[m + 1, 1:] = np.logaddexp(table[m, 1:], alpha[m] + table[m, :-1])
    return table


def log_partition(alpha, N: int) -> float:
    """``log Z`` for ``N`` particles, in O(N) memory."""
    alpha = np.asarray(alpha, dtype=float)
    if not 0 <= N <= alpha.size:
        raise ValueError(f"particle number {N} outside 0..{alpha.size}")
    row = np.full(N + 1, -np.inf)
    row[0] = 0.0
    for a in alpha:
        row[1:] = np.logaddexp(row[1:], a + row[:-1])
    return float(row[N])


@dataclass(frozen=True)
class PartitionResult:
    log_Z: float
    log_zeta: float

    @property
    def Z(self) -> float:
        return float(np.exp(self.log_Z))

    @property
    def zeta(self) -> float:
        return float(np.exp(self.log_zeta))


def _alpha_of(field: DisorderField | np.ndarray) -> np.ndarray:
    return field.values if isinstance(field, DisorderField) else np.asarray(field, dtype=float)


def partition_dp(geom: LatticeGeometry | None, field: DisorderField | np.ndarray, N: int) -> PartitionResult:
    """Canonical partition function ``Z`` and its subset average ``zeta = Z / C(n, N)``."""
    alpha = _alpha_of(field)
    if geom is not None and geom.n_sites != alpha.size:
        raise ValueError("field size does not match geometry")
    log_Z = log_partition(alpha, N)
    return PartitionResult(log_Z, log_Z - log_binom(alpha.size, N))


class GrandMeasure:
    """Product Bernoulli measure with occupation probability ``e^a / (1 + e^a)``."""

    def __init__(self, field: DisorderField | np.ndarray, geom: LatticeGeometry | None = None):
        self.alpha = _alpha_of(field)
        self.field = field
        self.geom = geom
        e = np.exp(self.alpha)
        self.p = e / (1.0 + e)

    @property
    def n_sites(self) -> int:
        return self.alpha.size

    @property
    def log_Z(self) -> float:
        return float(np.sum(np.log1p(np.exp(self.alpha))))

    def log_weights(self, masks: np.ndarray) -> np.ndarray:
        occ = (np.asarray(masks, dtype=np.int64)[:, None] >> np.arange(self.n_sites)) & 1
        return occ @ self.alpha - self.log_Z

    def space(self) -> ConfigSpace:
        return ConfigSpace(self.n_sites, None)

    def probabilities(self, space: ConfigSpace | None = None) -> np.ndarray:
        space = space or self.space()
        if space.n_sites != self.n_sites:
            raise ValueError("space and measure disagree on the number of sites")
        return np.exp(self.log_weights(space.states))


class CanonicalMeasure:
    """The Bernoulli measure conditioned on exactly ``N`` particles."""

    def __init__(self, field: DisorderField | np.ndarray, N: int, geom: LatticeGeometry | None = None):
        self.alpha = _alpha_of(field)
        self.field = field
        self.geom = geom
        if geom is not None and geom.n_sites != self.alpha.size:
            raise ValueError("field size does not match geometry")
        if not 0 <= N <= self.alpha.size:
            raise ValueError(f"particle number {N} outside 0..{self.alpha.size}")
        self.N = int(N)

    @property
    def n_sites(self) -> int:
        return self.alpha.size

    @property
    def degenerate(self) -> bool:
        return self.N in (0, self.n_sites)

    @cached_property
    def prefix_table(self) -> np.ndarray:
        """``log Z`` over sites ``0..m-1`` with ``n`` particles, shape ``(n_sites+1, N+1)``."""
        return _prefix_table(self.alpha, self.N)

    @cached_property
    def suffix_table(self) -> np.ndarray:
        """``log Z`` over sites ``m..n_sites-1`` with ``n`` particles."""
        return _prefix_table(self.alpha[::-1], self.N)[::-1]

    @property
    def log_Z(self) -> float:
        return float(self.prefix_table[-1, self.N])

    def partition(self) -> PartitionResult:
        return PartitionResult(self.log_Z, self.log_Z - log_binom(self.n_sites, self.N))

    def space(self) -> ConfigSpace:
        return ConfigSpace(self.n_sites, self.N)

    def log_weight(self, eta: Configuration) -> float:
        if eta.n_sites != self.n_sites:
            raise ValueError("configuration size does not match measure")
        if eta.N != self.N:
            raise ValueError(f"configuration has {eta.N} particles, measure has {self.N}")
        return float(eta.occupancy() @ self.alpha) - self.log_Z

    def weight(self, eta: Configuration) -> float:
        return float(np.exp(self.log_weight(eta)))

    def probabilities(self, space: ConfigSpace | None = None) -> np.ndarray:
        """Weights of every state of ``space``, in rank order."""
        space = space or self.space()
        if not space.fixed_n or space.N != self.N or space.n_sites != self.n_sites:
            raise ValueError("space does not match the canonical measure")
        return np.exp(space.occupancy @ self.alpha - self.log_Z)

    def log_Z_without(self, x: int, n: int) -> float:
        """``log Z`` of the sites other than ``x`` carrying ``n`` particles."""
        if n < 0 or n > self.n_sites - 1:
            return -np.inf
        j = np.arange(0, n + 1)
        return float(logsumexp(self.prefix_table[x, j] + self.suffix_table[x + 1, n - j]))

    def occupation_prob(self, x: int) -> float:
        if not 0 <= x < self.n_sites:
            raise ValueError(f"site {x} outside 0..{self.n_sites - 1}")
        if self.N == 0:
            return 0.0
        if self.N == self.n_sites:
            return 1.0
        return float(np.exp(self.alpha[x] + self.log_Z_without(x, self.N - 1) - self.log_Z))

    def occupation_profile(self) -> np.ndarray:
        return np.array([self.occupation_prob(x) for x in range(self.n_sites)])

    def sample_masks(self, rng: np.random.Generator | int | None, size: int) -> np.ndarray:
        """Exact draws by sequential conditioning, last site first."""
        rng = np.random.default_rng(rng)
        if self.n_sites > 62:
            raise ValueError("mask sampling supports at most 62 sites; use sample_occupancy")
        occ = self.sample_occupancy(rng, size)
        return (occ.astype(np.int64) << np.arange(self.n_sites, dtype=np.int64)).sum(axis=1)

    def sample_occupancy(self, rng: np.random.Generator | int | None, size: int) -> np.ndarray:
        rng = np.random.default_rng(rng)
        pre = self.prefix_table
        remaining = np.full(size, self.N, dtype=np.int64)
        occ = np.zeros((size, self.n_sites), dtype=np.int8)
        if self.N == 0:
            return occ
        for x in range(self.n_sites - 1, -1, -1):
            has = remaining > 0
            r = np.where(has, remaining, 1)
            p1 = np.where(has, np.exp(self.alpha[x] + pre[x, r - 1] - pre[x + 1, r]), 0.0)
            take = rng.random(size) < p1
            occ[:, x] = take
            remaining -= take
        return occ


def exact_sample(measure: CanonicalMeasure, seed: int | np.random.Generator | None) -> Configuration:
    occ = measure.sample_occupancy(seed, 1)[0]
    return Configuration.from_occupancy(occ)


def _observable_values(f, space: ConfigSpace) -> np.ndarray:
    if callable(f):
        return np.array([f(eta) for eta in space], dtype=float)
    values = np.asarray(f, dtype=float)
    if values.shape != (space.size,):
        raise ValueError(f"observable has shape {values.shape}, space has {space.size} states")
    return values


def expectation(measure: CanonicalMeasure | GrandMeasure, f: np.ndarray | Callable,
                space: ConfigSpace | None = None) -> float:
    space = space or measure.space()
    return float(measure.probabilities(space) @ _observable_values(f, space))


def covariance(measure: CanonicalMeasure | GrandMeasure, f, g, space: ConfigSpace | None = None) -> float:
    """``E[(f - E f)(g - E g)]`` by exact summation over the enumerated space."""
    space = space or measure.space()
    w = measure.probabilities(space)
    fv, gv = _observable_values(f, space), _observable_values(g, space)
    return float(w @ ((fv - w @ fv) * (gv - w @ gv)))


def variance(measure: CanonicalMeasure | GrandMeasure, f, space: ConfigSpace | None = None) -> float:
    return covariance(measure, f, f, space)
