"""Continuous-time kinetic Monte Carlo for Kawasaki dynamics in a site field.

Every directed nearest-neighbour move ``x -> y`` owns a slot in a binary
sum tree. A slot's rate is ``1 + exp(alpha_y - alpha_x)`` while ``x`` is
occupied and ``y`` empty, and 0 otherwise, so blocked jumps never enter
the catalog. After each event only the slots touching the two affected
sites are refreshed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
from scipy import stats

from .configspace import ConfigSpace
from .disorder import DisorderField
from .ensemble import CanonicalMeasure
from .forms import build_kawasaki
from .lattice import Boundary, LatticeGeometry

logger = logging.getLogger(__name__)

REBUILD_EVERY = 100_000
CHUNK = 65_536


class FrozenStateError(ValueError):
    """Empty or completely filled lattice: no move is ever possible."""


@numba.njit(cache=True)
def _tree_set(tree, M, slot, value):
    i = M + slot
    tree[i] = value
    i //= 2
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i //= 2


@numba.njit(cache=True)
def _tree_rebuild(tree, M):
    for i in range(M - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]


@numba.njit(cache=True)
def _tree_find(tree, M, target):
    i = 1
    while i < M:
        left = tree[2 * i]
        if target < left or tree[2 * i + 1] <= 0.0:
            i = 2 * i
        else:
            target -= left
            i = 2 * i + 1
    return i - M


@numba.njit(cache=True)
def _slot_rate(occ, s, slot_from, slot_to, base_rate):
    if occ[slot_from[s]] == 1 and occ[slot_to[s]] == 0:
        return base_rate[s]
    return 0.0


@numba.njit(cache=True)
def _run(occ, tree, M, slot_from, slot_to, base_rate, site_ptr, site_slots,
         u_sel, u_time, n_max, state, mask_state, obs_w, grid_dt, grid_out, rec_mask, rec_dt, rec_from, rec_to,
         record, since_rebuild, rebuild_every):
    # state = [time, next_grid_time, observable]; returns (events, samples written, rebuild counter)
    t = state[0]
    next_grid = state[1]
    obs = state[2]
    mask = mask_state[0]
    n_grid = 0
    n_done = 0
    for k in range(n_max):
        total = tree[1]
        dt = -np.log1p(-u_time[k]) / total
        if grid_dt > 0.0:
            while next_grid < t + dt and n_grid < grid_out.shape[0]:
                grid_out[n_grid] = obs
                n_grid += 1
                next_grid += grid_dt
            if n_grid >= grid_out.shape[0]:
                t = next_grid - grid_dt
                break
        s = _tree_find(tree, M, u_sel[k] * total)
        x = slot_from[s]
        y = slot_to[s]
        if record:
            rec_mask[k] = mask
            rec_dt[k] = dt
            rec_from[k] = x
            rec_to[k] = y
        occ[x] = 0
        occ[y] = 1
        if x < 63 and y < 63:
            mask ^= (np.int64(1) << np.int64(x)) | (np.int64(1) << np.int64(y))
        obs += obs_w[y] - obs_w[x]
        t += dt
        for site in (x, y):
            for p in range(site_ptr[site], site_ptr[site + 1]):
                q = site_slots[p]
                _tree_set(tree, M, q, _slot_rate(occ, q, slot_from, slot_to, base_rate))
        n_done += 1
        since_rebuild += 1
        if since_rebuild >= rebuild_every:
            _tree_rebuild(tree, M)
            since_rebuild = 0
    state[0] = t
    state[1] = next_grid
    state[2] = obs
    mask_state[0] = mask
    return n_done, n_grid, since_rebuild


@dataclass
class EventLog:
    masks: np.ndarray
    waits: np.ndarray
    jumps: np.ndarray


class KawasakiKMC:
    """Event-driven simulator; the stateful ``KmcState`` of one trajectory.

    Parameters
    ----------
    geom : LatticeGeometry
    field : DisorderField or array of site fields
    occupancy : initial 0/1 occupancy per site
    seed : master seed of the uniform stream
    """

    def __init__(self, geom: LatticeGeometry, field: DisorderField | np.ndarray, occupancy, seed: int | None = 0):
        self.geom = geom
        self.alpha = field.values if isinstance(field, DisorderField) else np.asarray(field, dtype=float)
        occ = np.asarray(occupancy, dtype=np.int8).copy()
        if occ.shape != (geom.n_sites,):
            raise ValueError("occupancy must have one entry per site")
        n = int(occ.sum())
        if n in (0, geom.n_sites):
            raise FrozenStateError(f"N={n} on {geom.n_sites} sites admits no moves")
        self.N = n
        b = geom.bond_array
        self.slot_from = np.concatenate([b[:, 0], b[:, 1]]).astype(np.int64)
        self.slot_to = np.concatenate([b[:, 1], b[:, 0]]).astype(np.int64)
        self.base_rate = 1.0 + np.exp(self.alpha[self.slot_to] - self.alpha[self.slot_from])
        n_slots = self.slot_from.size
        touching = [[] for _ in range(geom.n_sites)]
        for s in range(n_slots):
            touching[self.slot_from[s]].append(s)
            touching[self.slot_to[s]].append(s)
        self.site_ptr = np.cumsum([0] + [len(t) for t in touching]).astype(np.int64)
        self.site_slots = np.concatenate([np.array(t, dtype=np.int64) for t in touching])
        self.M = 1 << max(1, (n_slots - 1).bit_length())
        self.occ = occ
        self.tree = np.zeros(2 * self.M)
        self.rng = np.random.default_rng(seed)
        self.time = 0.0
        self.events = 0
        self._since_rebuild = 0
        self.rebuild()

    @classmethod
    def from_measure(cls, measure: CanonicalMeasure, geom: LatticeGeometry | None = None,
                     seed: int | None = 0) -> "KawasakiKMC":
        """Start from an exact draw of the canonical measure."""
        geom = geom or measure.geom
        rng = np.random.default_rng(seed)
        occ = measure.sample_occupancy(rng, 1)[0]
        return cls(geom, measure.alpha, occ, seed=rng)

    @property
    def n_sites(self) -> int:
        return self.geom.n_sites

    @property
    def total_rate(self) -> float:
        return float(self.tree[1])

    @property
    def mask(self) -> int:
        return int(np.sum(self.occ.astype(np.int64) << np.arange(self.n_sites, dtype=np.int64)))

    def catalog_from_scratch(self) -> np.ndarray:
        legal = (self.occ[self.slot_from] == 1) & (self.occ[self.slot_to] == 0)
        return np.where(legal, self.base_rate, 0.0)

    def rebuild(self) -> None:
        self.tree[:] = 0.0
        self.tree[self.M:self.M + self.slot_from.size] = self.catalog_from_scratch()
        _tree_rebuild(self.tree, self.M)

    def catalog(self) -> np.ndarray:
        return self.tree[self.M:self.M + self.slot_from.size].copy()

    def validate(self) -> tuple[bool, float]:
        """Compare incremental catalog with a full rebuild.

        Returns exact leaf agreement and the relative error of the stored total.
        """
        fresh = self.catalog_from_scratch()
        same = bool(np.array_equal(fresh, self.catalog()))
        rel = abs(self.tree[1] - fresh.sum()) / fresh.sum()
        return same, float(rel)

    def corrupt(self, slot: int, factor: float) -> None:
        """Multiply one directed move's rate, breaking detailed balance (negative controls)."""
        self.base_rate = self.base_rate.copy()
        self.base_rate[slot] *= factor
        self.rebuild()

    def slot_index(self, x: int, y: int) -> int:
        hit = np.flatnonzero((self.slot_from == x) & (self.slot_to == y))
        if hit.size == 0:
            raise ValueError(f"no directed move {x} -> {y}")
        return int(hit[0])

    def exit_rate(self, x: int) -> float:
        cat = self.catalog()
        return float(cat[self.slot_from == x].sum())

    def _advance(self, n_events: int, obs_w=None, grid_dt: float = 0.0, n_samples: int = 0,
                 record: bool = False):
        obs_w = np.zeros(self.n_sites) if obs_w is None else np.asarray(obs_w, dtype=float)
        state = np.array([self.time, self.time, float(obs_w @ self.occ)])
        mask_state = np.array([self.mask if self.n_sites < 63 else 0], dtype=np.int64)
        grid = np.zeros(n_samples)
        masks, waits, jumps = [], [], []
        n_grid_total = 0
        remaining = n_events
        while remaining > 0:
            chunk = min(CHUNK, remaining)
            u = self.rng.random((2, chunk))
            rec_mask = np.zeros(chunk if record else 0, dtype=np.int64)
            rec_dt = np.zeros(chunk if record else 0)
            rec_from = np.zeros(chunk if record else 0, dtype=np.int64)
            rec_to = np.zeros(chunk if record else 0, dtype=np.int64)
            done, n_grid, self._since_rebuild = _run(
                self.occ, self.tree, self.M, self.slot_from, self.slot_to, self.base_rate,
                self.site_ptr, self.site_slots, u[0], u[1], chunk, state, mask_state, obs_w, grid_dt,
                grid[n_grid_total:], rec_mask, rec_dt, rec_from, rec_to, record,
                self._since_rebuild, REBUILD_EVERY)
            n_grid_total += n_grid
            self.events += done
            remaining -= done
            if record:
                masks.append(rec_mask[:done])
                waits.append(rec_dt[:done])
                jumps.append(np.stack([rec_from[:done], rec_to[:done]], axis=1))
            if grid_dt > 0 and n_grid_total >= n_samples:
                break
        self.time = float(state[0])
        log = None
        if record:
            log = EventLog(np.concatenate(masks), np.concatenate(waits), np.concatenate(jumps))
        return log, grid[:n_grid_total]

    def step(self) -> tuple[tuple[int, int], float]:
        """One event: returns ``((from, to), waiting time)``."""
        log, _ = self._advance(1, record=True)
        return (int(log.jumps[0, 0]), int(log.jumps[0, 1])), float(log.waits[0])

    def run(self, n_events: int, record: bool = False) -> EventLog | None:
        log, _ = self._advance(int(n_events), record=record)
        return log

    def sample_observable(self, weights, dt: float, n_samples: int, max_events: int | None = None) -> np.ndarray:
        """Linear observable ``sum_x w_x eta_x`` on the time grid ``t0, t0 + dt, ...``."""
        if dt <= 0:
            raise ValueError("sampling interval must be positive")
        max_events = max_events or 2 ** 62
        _, grid = self._advance(max_events, obs_w=weights, grid_dt=dt, n_samples=n_samples)
        return grid

    def frozen_waiting_times(self, n: int) -> np.ndarray:
        """Waiting times drawn at the current, fixed total rate (no moves applied)."""
        return -np.log1p(-self.rng.random(n)) / self.total_rate


def kmc_step(state: KawasakiKMC):
    return state.step()


# --- equilibrium validation ------------------------------------------------

@dataclass
class EquilibriumReport:
    statistic: float
    p_value: float
    df: int
    status: str
    pearson: float
    frequencies: np.ndarray = field(repr=False)
    expected: np.ndarray = field(repr=False)
    n_batches: int = 0
    method: str = "batch-means hotelling"

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def equilibrium_check(state: KawasakiKMC, measure: CanonicalMeasure, events: int, alpha_level: float = 1e-3,
                      n_batches: int | None = None, burn_in: int = 0) -> EquilibriumReport:
    """Time-weighted occupation frequencies against the exact canonical weights.

    The trajectory is cut into equal-duration batches; batch frequency
    vectors are treated as independent draws and compared with the exact
    law by Hotelling's T^2 (reported as an F test). The plain Pearson
    statistic of the pooled frequencies is returned for reference.
    """
    space = ConfigSpace(measure.n_sites, measure.N)
    S = space.size
    if S > 10_000:
        raise ValueError("equilibrium check needs an enumerable space (<= 1e4 states)")
    expected = measure.probabilities(space)
    if burn_in:
        state.run(burn_in)
    log = state.run(events, record=True)
    if events < 100 * S:
        return EquilibriumReport(math.nan, math.nan, S - 1, "inconclusive", math.nan,
                                 np.zeros(S), expected)
    B = n_batches or max(100, 4 * S)
    ranks = space.rank_many(log.masks)
    t_end = np.cumsum(log.waits)
    t_start = t_end - log.waits
    T = t_end[-1]
    batch = np.minimum((t_start / T * B).astype(np.int64), B - 1)
    occ_time = np.zeros((B, S))
    np.add.at(occ_time, (batch, ranks), log.waits)
    per_batch = occ_time / occ_time.sum(axis=1, keepdims=True)
    freq = occ_time.sum(axis=0) / T
    pearson = float(T * np.sum((freq - expected) ** 2 / expected))
    p = S - 1
    if B - p < 2:
        return EquilibriumReport(math.nan, math.nan, p, "inconclusive", pearson, freq, expected, B)
    diff = per_batch[:, :p].mean(axis=0) - expected[:p]
    cov = np.cov(per_batch[:, :p], rowvar=False).reshape(p, p)
    t2 = float(B * diff @ np.linalg.solve(cov, diff))
    fstat = t2 * (B - p) / (p * (B - 1))
    pval = float(stats.f.sf(fstat, p, B - p))
    status = "pass" if pval > alpha_level else "fail"
    return EquilibriumReport(fstat, pval, p, status, pearson, freq, expected, B)


def flux_balance(log: EventLog, space: ConfigSpace) -> tuple[np.ndarray, np.ndarray]:
    """Counts of each observed transition and of its reverse."""
    src = space.rank_many(log.masks)
    after = log.masks ^ ((np.int64(1) << log.jumps[:, 0]) | (np.int64(1) << log.jumps[:, 1]))
    dst = space.rank_many(after)
    n = space.size
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (src, dst), 1)
    return counts, counts.T


def waiting_time_ks(state: KawasakiKMC, n: int = 20_000) -> float:
    """KS p-value of frozen-catalog waiting times against an exponential with fitted mean."""
    w = state.frozen_waiting_times(n)
    return float(stats.kstest(w, "expon", args=(0, w.mean())).pvalue)


# --- relaxation -----------------------------------------------------------

def fourier_mode(geom: LatticeGeometry) -> np.ndarray:
    """Slowest density mode ``cos(pi (x + 1/2) / L)`` along the first axis."""
    L = geom.side_lengths[0]
    x0 = np.array([geom.coords(s)[0] for s in geom.sites], dtype=float)
    if geom.boundary is Boundary.PERIODIC:
        return np.cos(2 * np.pi * x0 / L)
    return np.cos(np.pi * (x0 + 0.5) / L)


def autocorrelation(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(f * np.conj(f), nfft)[:n]
    return acf / acf[0] if acf[0] > 0 else acf


def integrated_time(x: np.ndarray, dt: float, c: float = 5.0) -> tuple[float, int]:
    """Integrated autocorrelation time in time units with Sokal's self-consistent window."""
    rho = autocorrelation(x)
    partial = np.cumsum(rho) - 0.5 * rho[0]  # trapezoid: 1/2 + sum_{k>=1} rho_k
    tau_steps = 2 * partial
    window = np.arange(rho.size) < c * tau_steps
    M = int(np.argmin(window)) if not window.all() else rho.size - 1
    return float(dt * partial[M]), M


@dataclass
class RelaxationResult:
    tau: float
    ci_low: float
    ci_high: float
    horizon: float
    window: int
    conclusive: bool

    @property
    def stderr(self) -> float:
        return (self.ci_high - self.tau) / 1.96


def relaxation_time(state: KawasakiKMC, observable, horizon: float, dt: float) -> RelaxationResult:
    """Estimate the integrated relaxation time of a linear observable.

    ``state`` should start in equilibrium (see ``KawasakiKMC.from_measure``).
    The interval uses Sokal's variance ``2 (2M + 1) / n * tau^2``.
    """
    n = int(horizon / dt)
    if n < 10:
        raise ValueError("horizon must cover at least 10 sampling intervals")
    series = state.sample_observable(observable, dt, n)
    tau, M = integrated_time(series, dt)
    se = tau * math.sqrt(2 * (2 * M + 1) / series.size)
    return RelaxationResult(tau, tau - 1.96 * se, tau + 1.96 * se, horizon, M, horizon >= 50 * tau)


# --- two-block statistic ---------------------------------------------------

def block_average(occ: np.ndarray, geom: LatticeGeometry, radius: int) -> np.ndarray:
    """Average over the periodic cube ``|y - x|_inf <= radius``, for a batch of configurations."""
    shape = (occ.shape[0],) + geom.side_lengths
    grid = occ.reshape(shape).astype(np.int64)
    total = grid
    for axis in range(1, geom.dimension + 1):
        acc = np.zeros_like(total)
        for off in range(-radius, radius + 1):
            acc += np.roll(total, off, axis=axis)
        total = acc
    return (total / (2 * radius + 1) ** geom.dimension).reshape(occ.shape[0], -1)


def _phi_values(phi: Callable | None, geom: LatticeGeometry) -> np.ndarray:
    if phi is None:
        return np.ones(geom.n_sites)
    L = np.array(geom.side_lengths, dtype=float)
    u = np.array([geom.coords(s) for s in geom.sites], dtype=float) / L
    return np.asarray(phi(u), dtype=float) * np.ones(geom.n_sites)


def macro_radius(delta: float, L: int) -> int:
    return int(math.floor(delta * L))


def two_block_values(occ: np.ndarray, geom: LatticeGeometry, F: Callable, phi: Callable | None,
                     k_window: int, delta: float) -> np.ndarray:
    """``L^-d |sum_x phi(x/L) (F(m^k) - F(m^R))|`` per configuration, ``R = floor(delta L)``."""
    if geom.boundary is not Boundary.PERIODIC:
        raise ValueError("the two-block statistic is defined on a periodic box")
    L = geom.side_lengths[0]
    R = macro_radius(delta, L)
    if k_window < 1 or R < 1:
        raise ValueError("both window radii must be >= 1")
    if R < k_window:
        raise ValueError(f"macro radius floor(delta L) = {R} is smaller than k_window = {k_window}")
    occ = np.atleast_2d(occ)
    w = _phi_values(phi, geom)
    diff = F(block_average(occ, geom, k_window)) - F(block_average(occ, geom, R))
    return np.abs(diff @ w) / geom.n_sites


@dataclass
class TwoBlockEstimate:
    value: float
    stderr: float
    samples: int


def two_block_statistic(source: CanonicalMeasure | np.ndarray, geom: LatticeGeometry, F: Callable,
                        phi: Callable | None = None, k_window: int = 1, delta: float = 0.25,
                        samples: int = 1000, seed: int | None = 0) -> TwoBlockEstimate:
    """Monte Carlo estimate of the two-block expectation at density 1.

    ``source`` is either a canonical measure (drawn exactly) or a batch of
    0/1 configurations, e.g. from a KMC trajectory.
    """
    if isinstance(source, CanonicalMeasure):
        occ = source.sample_occupancy(np.random.default_rng(seed), samples)
    else:
        occ = np.atleast_2d(np.asarray(source))
    vals = two_block_values(occ, geom, F, phi, k_window, delta)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan
    return TwoBlockEstimate(float(vals.mean()), se, int(vals.size))


def two_block_functional(density: np.ndarray, measure: CanonicalMeasure, geom: LatticeGeometry, F: Callable,
                         phi: Callable | None = None, k_window: int = 1, delta: float = 0.25) -> float:
    """Two-block expectation under ``density * mu`` minus ``L^(2-d) D_Kaw(sqrt(density))``."""
    space = ConfigSpace(geom.n_sites, measure.N)
    f = np.asarray(density, dtype=float)
    if f.shape != (space.size,):
        raise ValueError(f"density must have {space.size} entries")
    if np.any(f < 0):
        raise ValueError("density has negative entries")
    mu = measure.probabilities(space)
    if abs(mu @ f - 1) > 1e-9:
        raise ValueError(f"density integrates to {mu @ f:.12g}, not 1")
    vals = two_block_values(space.occupancy, geom, F, phi, k_window, delta)
    L, d = geom.side_lengths[0], geom.dimension
    expectation = float(mu @ (vals * f))
    if space.degenerate:
        return expectation
    _, D = build_kawasaki(space, measure, geom)
    return expectation - L ** (2 - d) * D(np.sqrt(f))
