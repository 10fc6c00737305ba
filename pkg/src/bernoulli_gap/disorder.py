"""Site disorder: bounded external fields, grid quantization and peak sets."""
from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .lattice import LatticeGeometry


@dataclass(frozen=True, eq=False)
class DisorderField:
    """External field ``alpha_x`` with ``|alpha_x| <= K``."""

    values: np.ndarray
    K: float
    degenerate: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.K < 0:
            raise ValueError(f"field bound K must be nonnegative, got {self.K}")
        if values.size and np.max(np.abs(values)) > self.K:
            raise ValueError(f"field exceeds its bound K={self.K}")

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        return (isinstance(other, DisorderField) and self.K == other.K
                and np.array_equal(self.values, other.values))

    def shifted(self, c: float) -> "DisorderField":
        """Field ``alpha + c``; the bound grows to cover the shifted values."""
        values = self.values + c
        return DisorderField(values, max(self.K, float(np.max(np.abs(values)))))


def zero_field(n_sites: int) -> DisorderField:
    return DisorderField(np.zeros(n_sites), 0.0)


def constant_field(n_sites: int, c: float) -> DisorderField:
    return DisorderField(np.full(n_sites, float(c)), abs(float(c)))


def generate_iid(geom: LatticeGeometry | int, K: float, seed: int | None) -> DisorderField:
    """Independent uniform values on ``[-K, K]``, one per site."""
    if K < 0:
        raise ValueError(f"K must be nonnegative, got {K}")
    n = geom if isinstance(geom, (int, np.integer)) else geom.n_sites
    rng = np.random.default_rng(seed)
    return DisorderField(rng.uniform(-K, K, size=n), float(K))


def quantize_to_grid(field: DisorderField, L: int) -> DisorderField:
    """Round every value to the nearest point of ``{K j / L : j = -L..L}``.

    Exact midpoints round toward ``+K``. With ``K == 0`` the grid collapses
    to ``{0}`` and the zero field comes back flagged ``degenerate``.
    """
    if L < 1:
        raise ValueError(f"grid resolution L must be >= 1, got {L}")
    K = field.K
    if K == 0:
        return DisorderField(np.zeros(len(field)), 0.0, degenerate=True)
    j = np.clip(np.floor(field.values * L / K + 0.5), -L, L)
    return DisorderField(K * (j / L), K)


def force_endpoints(field: DisorderField) -> DisorderField:
    """Set the first and last site of a segment to the top value ``K``."""
    values = field.values.copy()
    values[0] = values[-1] = field.K
    return DisorderField(values, field.K)


def peak_set(field: DisorderField) -> list[int]:
    """Increasing list of sites where the field equals ``K`` exactly.

    Only meaningful for a segment whose endpoints already sit at ``K``.
    """
    v = field.values
    if v.size == 0 or v[0] != field.K or v[-1] != field.K:
        raise ValueError("endpoints must equal K; apply force_endpoints first")
    return [int(i) for i in np.flatnonzero(v == field.K)]


def gap_weights(peaks: list[int], L: int) -> np.ndarray:
    """Weights ``(x_{s+1} - x_s) / L`` for consecutive peaks.

    Their inverses ``L / (x_{s+1} - x_s)`` weight the peak-to-peak exchange
    forms; for a segment spanning ``L`` bonds they sum to at most 1.
    """
    p = np.asarray(peaks, dtype=float)
    return np.diff(p) / L


def write_field(field: DisorderField, dest) -> None:
    """Write ``site_index value`` lines; values use shortest round-trip repr."""
    lines = [f"# K {field.K!r}"]
    lines += [f"{i} {float(a)!r}" for i, a in enumerate(field.values)]
    text = "\n".join(lines) + "\n"
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w") as fh:
            fh.write(text)
    else:
        dest.write(text)


def read_field(src) -> DisorderField:
    if isinstance(src, (str, os.PathLike)):
        with open(src) as fh:
            return _parse_field(fh)
    return _parse_field(src)


def _parse_field(lines: Iterable[str] | io.TextIOBase) -> DisorderField:
    K = None
    entries = {}
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "K":
                K = float(parts[1])
            continue
        idx, val = line.split()
        entries[int(idx)] = float(val)
    n = len(entries)
    if sorted(entries) != list(range(n)):
        raise ValueError("site indices must be exactly 0..n-1")
    values = np.array([entries[i] for i in range(n)])
    if K is None:
        K = float(np.max(np.abs(values))) if n else 0.0
    return DisorderField(values, K)
