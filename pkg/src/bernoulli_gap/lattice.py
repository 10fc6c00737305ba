"""Box geometries, nearest-neighbour bonds and staircase routing between sites."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from typing import Sequence

import numpy as np


class Boundary(str, Enum):
    FREE = "free"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class LatticeGeometry:
    """A d-dimensional box of sites in row-major order.

    Bonds are stored once each as ``(lower, higher)`` site-index pairs,
    sorted lexicographically.
    """

    dimension: int
    side_lengths: tuple[int, ...]
    boundary: Boundary = Boundary.FREE
    origin: tuple[int, ...] = ()
    bonds: tuple[tuple[int, int], ...] = field(default=(), repr=False)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.side_lengths))

    @property
    def sites(self) -> range:
        return range(self.n_sites)

    @property
    def bond_array(self) -> np.ndarray:
        return np.asarray(self.bonds, dtype=np.int64).reshape(-1, 2)

    def coords(self, site: int) -> tuple[int, ...]:
        """Local coordinates of ``site`` (origin not added)."""
        self._check_site(site)
        return tuple(int(c) for c in np.unravel_index(site, self.side_lengths))

    def absolute_coords(self, site: int) -> tuple[int, ...]:
        return tuple(c + o for c, o in zip(self.coords(site), self.origin))

    def index(self, coords: Sequence[int]) -> int:
        """Site index of local coordinates."""
        if len(coords) != self.dimension:
            raise ValueError(f"expected {self.dimension} coordinates, got {len(coords)}")
        for c, n in zip(coords, self.side_lengths):
            if not 0 <= c < n:
                raise ValueError(f"coordinates {tuple(coords)} lie outside the box")
        return int(np.ravel_multi_index(tuple(coords), self.side_lengths))

    def neighbours(self, site: int) -> list[int]:
        out = set()
        for a, b in self.bonds:
            if a == site:
                out.add(b)
            elif b == site:
                out.add(a)
        return sorted(out)

    def _check_site(self, site: int) -> None:
        if not 0 <= site < self.n_sites:
            raise ValueError(f"site {site} outside geometry with {self.n_sites} sites")


def _enumerate_bonds(side_lengths: tuple[int, ...], boundary: Boundary) -> tuple[tuple[int, int], ...]:
    bonds = set()
    for c in product(*(range(n) for n in side_lengths)):
        i = int(np.ravel_multi_index(c, side_lengths))
        for axis, n in enumerate(side_lengths):
            nxt = list(c)
            if c[axis] + 1 < n:
                nxt[axis] = c[axis] + 1
            elif boundary is Boundary.PERIODIC and n > 1:
                nxt[axis] = 0
            else:
                continue
            j = int(np.ravel_multi_index(tuple(nxt), side_lengths))
            if i != j:
                bonds.add((min(i, j), max(i, j)))
    return tuple(sorted(bonds))


def build_box(d: int, L: int | Sequence[int], boundary: Boundary | str = Boundary.FREE,
              origin: Sequence[int] | None = None) -> LatticeGeometry:
    """Build the box ``{0, ..., L-1}^d`` (shifted by ``origin``).

    ``L`` may be a single side length or one per axis.
    """
    if int(d) != d or d <= 0:
        raise ValueError(f"dimension must be a positive integer, got {d}")
    sides = (int(L),) * d if np.isscalar(L) else tuple(int(n) for n in L)
    if len(sides) != d:
        raise ValueError(f"need {d} side lengths, got {len(sides)}")
    if any(n <= 0 for n in sides):
        raise ValueError(f"side lengths must be positive, got {sides}")
    boundary = Boundary(boundary)
    if boundary is Boundary.PERIODIC and any(n < 2 for n in sides):
        raise ValueError("periodic boundary needs every side length >= 2")
    origin = tuple(origin) if origin is not None else (0,) * d
    if len(origin) != d:
        raise ValueError(f"origin must have {d} components")
    return LatticeGeometry(d, sides, boundary, origin, _enumerate_bonds(sides, boundary))


def build_segment(L: int, boundary: Boundary | str = Boundary.FREE) -> LatticeGeometry:
    return build_box(1, L, boundary)


@dataclass(frozen=True)
class SwapPath:
    """Nearest-neighbour route from ``x`` to ``y``.

    ``sites`` lists every site visited, ``bonds`` the traversed bonds in
    path order, each normalized to ``(lower, higher)``.
    """

    x: int
    y: int
    sites: tuple[int, ...]
    bonds: tuple[tuple[int, int], ...]

    @property
    def length(self) -> int:
        return len(self.bonds)


def canonical_path(geom: LatticeGeometry, x: int, y: int) -> SwapPath:
    """Staircase path: correct the first coordinate, then the second, and so on.

    The route never wraps around, whatever the boundary condition.
    """
    cx, cy = list(geom.coords(x)), geom.coords(y)
    sites = [x]
    for axis in range(geom.dimension):
        step = 1 if cy[axis] > cx[axis] else -1
        while cx[axis] != cy[axis]:
            cx[axis] += step
            sites.append(geom.index(cx))
    bonds = tuple((min(a, b), max(a, b)) for a, b in zip(sites, sites[1:]))
    return SwapPath(x, y, tuple(sites), bonds)


@dataclass(frozen=True)
class CongestionResult:
    counts: dict[tuple[int, int], int]
    max_count: int
    nominal: float
    pair_convention: str = "unordered"

    @property
    def ordered_max_count(self) -> int:
        """Maximum load if each pair were counted in both orders along the same path."""
        return 2 * self.max_count


def nominal_congestion(d: int, L: int) -> float:
    """The nominal per-bond path load ``d (L/2)^(d+1)``."""
    return d * (L / 2) ** (d + 1)


def congestion(geom: LatticeGeometry) -> CongestionResult:
    """Count, for every bond, the unordered site pairs whose canonical path uses it.

    Each pair is routed from the lower to the higher site index.
    """
    counts = {b: 0 for b in geom.bonds}
    for x in geom.sites:
        for y in range(x + 1, geom.n_sites):
            for b in canonical_path(geom, x, y).bonds:
                counts[b] += 1
    max_count = max(counts.values(), default=0)
    side = max(geom.side_lengths)
    return CongestionResult(counts, max_count, nominal_congestion(geom.dimension, side))
