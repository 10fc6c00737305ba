"""Spectral gaps, comparison pencils and numerical certificates.

A form ``Q`` with base measure ``mu`` acts on observables through the
generalized problem ``Q v = lam diag(mu) v``. The gap is its smallest
nonzero eigenvalue. Comparison constants ``max_f A(f) / B(f)`` come from
the pencil ``(A, B)`` restricted to the complement of ``ker B``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .configspace import ConfigSpace
from .disorder import DisorderField, force_endpoints, generate_iid, quantize_to_grid, zero_field
from .ensemble import CanonicalMeasure
from .forms import (QuadraticForm, build_bl, build_kawasaki, build_single_exchange, exchange_form,
                    variance_form)
from .lattice import LatticeGeometry, build_box, canonical_path

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000
KERNEL_TOL = 1e-9


class ReducibleError(ValueError):
    """The move set does not connect every pair of states."""


class KernelContainmentError(ValueError):
    """``ker B`` is not contained in ``ker A``; the comparison constant is infinite."""


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(message)
        self.residual = residual


@dataclass
class GapResult:
    gap: float
    method: str
    residual: float
    degenerate: bool = False
    eigenvector: np.ndarray | None = field(default=None, repr=False)

    @property
    def relaxation_time(self) -> float:
        return 1.0 / self.gap


@dataclass
class PencilResult:
    lambda_max: float
    bound: float = math.inf
    tolerance: float = 0.0
    method: str = "dense"
    kernel_dim: int = 0
    degenerate: bool = False
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.degenerate or self.lambda_max <= self.bound + self.tolerance

    @property
    def slack(self) -> float:
        return self.bound / self.lambda_max if self.lambda_max > 0 else math.inf


def _describe_state(form: QuadraticForm, idx: int) -> str:
    if form.space is None:
        return f"#{idx}"
    return f"#{idx} ({form.space.unrank(int(idx))})"


def check_irreducible(form: QuadraticForm) -> None:
    Q = sp.csr_matrix(form.matrix)
    off = Q - sp.diags(Q.diagonal())
    off.eliminate_zeros()
    n_comp, labels = connected_components(off, directed=False)
    if n_comp > 1:
        a = 0
        b = int(np.flatnonzero(labels != labels[0])[0])
        raise ReducibleError(f"move set is reducible: states {_describe_state(form, a)} and "
                             f"{_describe_state(form, b)} are not connected")


def _dense_gap(S: np.ndarray) -> tuple[float, np.ndarray]:
    w, v = la.eigh(S, subset_by_index=[0, 1])
    return float(w[1]), v[:, 1]


def _iterative_gap(S: sp.csr_matrix, u: np.ndarray, tol: float) -> tuple[float, np.ndarray]:
    n = S.shape[0]
    shift = -1e-4 * float(np.max(S.diagonal()))
    lu = spla.splu((S - shift * sp.identity(n, format="csc")).tocsc())

    def project(x):
        return x - u * (u @ x)

    op_inv = spla.LinearOperator((n, n), matvec=lambda x: project(lu.solve(project(np.asarray(x).ravel()))),
                                 dtype=float)
    v0 = project(np.random.default_rng(0).standard_normal(n))
    w, v = spla.eigsh(S, k=2, sigma=shift, which="LM", OPinv=op_inv, v0=v0, tol=tol, maxiter=10 * n)
    k = int(np.argmin(w))
    return float(w[k]), v[:, k]


def spectral_gap(form: QuadraticForm, method: str = "auto", tol: float = 1e-12) -> GapResult:
    """Smallest nonzero eigenvalue of ``form`` relative to its base measure.

    Dense below ``DENSE_LIMIT`` states. Above it, shift-invert Lanczos on the
    symmetrized operator with the constant mode ``sqrt(mu)`` projected out.
    """
    n = form.size
    if n <= 1 or form.degenerate:
        return GapResult(math.nan, "none", 0.0, degenerate=True)
    check_irreducible(form)
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "iterative"
    s = 1.0 / np.sqrt(form.mu)
    u = np.sqrt(form.mu)
    u = u / np.linalg.norm(u)
    if method == "dense":
        S = form.dense() * s[:, None] * s[None, :]
        S = 0.5 * (S + S.T)
        gap, v = _dense_gap(S)
    elif method == "iterative":
        D = sp.diags(s)
        S = (D @ sp.csr_matrix(form.matrix) @ D).tocsr()
        try:
            gap, v = _iterative_gap(S, u, tol)
        except spla.ArpackNoConvergence as exc:
            raise NonConvergenceError(f"Lanczos did not converge: {exc}") from exc
    else:
        raise ValueError(f"unknown method {method!r}")
    v = v - u * (u @ v)
    v /= np.linalg.norm(v)
    residual = float(np.linalg.norm(S @ v - gap * v) / gap)
    return GapResult(gap, method, residual, eigenvector=v * s)


def _as_dense(q: QuadraticForm | np.ndarray | sp.spmatrix) -> np.ndarray:
    if isinstance(q, QuadraticForm):
        return q.dense()
    return q.toarray() if sp.issparse(q) else np.asarray(q, dtype=float)


def _dense_pencil(A: np.ndarray, B: np.ndarray) -> tuple[float, int]:
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    wb, U = la.eigh(B)
    scale = max(float(np.max(np.abs(wb), initial=0.0)), np.finfo(float).tiny)
    keep = wb > KERNEL_TOL * scale
    kernel = U[:, ~keep]
    a_scale = max(float(np.max(np.abs(la.eigvalsh(A)), initial=0.0)), np.finfo(float).tiny)
    if kernel.size:
        leak = np.linalg.norm(A @ kernel, axis=0).max() / a_scale
        if leak > KERNEL_TOL:
            raise KernelContainmentError(f"ker B is not inside ker A (leak {leak:.3e})")
    if not keep.any():
        return 0.0, int((~keep).sum())
    W = U[:, keep] / np.sqrt(wb[keep])
    M = W.T @ A @ W
    return float(la.eigvalsh(0.5 * (M + M.T))[-1]), int((~keep).sum())


def _iterative_pencil(A: sp.spmatrix, B: sp.spmatrix) -> float:
    # Both forms kill constants and ker B is exactly the constants: pin f(state 0) = 0.
    A = sp.csr_matrix(A)[1:, 1:]
    B = sp.csc_matrix(B)[1:, 1:]
    lu = spla.splu(B.tocsc())
    minv = spla.LinearOperator(B.shape, matvec=lu.solve, dtype=float)
    w = spla.eigsh(A, k=1, M=B, Minv=minv, which="LA", return_eigenvectors=False, tol=1e-12)
    return float(w[0])


def pencil_ratio(A: QuadraticForm | np.ndarray, B: QuadraticForm | np.ndarray, method: str = "auto",
                 bound: float = math.inf, tolerance: float = 0.0) -> PencilResult:
    """``max A(f) / B(f)`` over ``f`` outside ``ker B``."""
    if isinstance(A, QuadraticForm) and isinstance(B, QuadraticForm) and not A.compatible(B):
        raise ValueError("pencil forms live on different spaces or measures")
    n = A.shape[0] if not isinstance(A, QuadraticForm) else A.size
    if n <= 1:
        return PencilResult(0.0, bound, tolerance, "none", n, degenerate=True)
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "iterative"
    if method == "dense":
        lam, kdim = _dense_pencil(_as_dense(A), _as_dense(B))
        return PencilResult(lam, bound, tolerance, "dense", kdim)
    Bm = B.matrix if isinstance(B, QuadraticForm) else B
    Am = A.matrix if isinstance(A, QuadraticForm) else A
    n_comp, _ = connected_components(sp.csr_matrix(Bm) - sp.diags(sp.csr_matrix(Bm).diagonal()),
                                     directed=False)
    if n_comp != 1:
        raise ValueError("iterative pencil needs ker B = constants; use method='dense'")
    lam = _iterative_pencil(sp.csr_matrix(Am), sp.csr_matrix(Bm))
    return PencilResult(lam, bound, tolerance, "iterative", 1)


# --- comparison certificates -------------------------------------------------

def _segment_bonds(k: int) -> list[tuple[int, int]]:
    return [(x, x + 1) for x in range(k - 1)]


def certify_lemma2(k: int, N: int, rho: Sequence[float] | None = None, tolerance: float = 1e-9) -> PencilResult:
    """Long exchange ``(0, k-1)`` against the ``1/rho``-weighted bond exchanges, homogeneous measure.

    ``rho`` holds one positive weight per bond of the ``k``-site segment with
    total at most 1; uniform by default. The certified bound is 1.
    """
    if k < 2:
        raise ValueError("need at least two sites")
    rho = np.full(k - 1, 1.0 / (k - 1)) if rho is None else np.asarray(rho, dtype=float)
    if rho.shape != (k - 1,) or np.any(rho <= 0):
        raise ValueError(f"rho must hold {k - 1} positive weights")
    if rho.sum() > 1 + 1e-12:
        raise ValueError(f"weights sum to {rho.sum():.6g} > 1")
    space = ConfigSpace(k, N)
    measure = CanonicalMeasure(zero_field(k), N)
    if space.degenerate:
        return PencilResult(0.0, 1.0, tolerance, "none", 1, degenerate=True)
    A = build_single_exchange(space, measure, 0, k - 1)
    _, B = exchange_form(space, measure, _segment_bonds(k), weights=1.0 / rho, label="weighted bonds")
    res = pencil_ratio(A, B, bound=1.0, tolerance=tolerance)
    res.info.update(k=k, N=N, rho=rho.tolist())
    return res


def lemma1_bound(K: float, L: int) -> float:
    return math.exp(13 * K) * L


def certify_lemma1(L: int, N: int, field: DisorderField, tolerance: float = 1e-9) -> PencilResult:
    """Exchange of the segment's end sites against the sum of all bond exchanges.

    The bound is ``e^{13K} L``; ``info['bound_homogeneous']`` carries the
    sharper ``L - 1`` that uniform weights give when the field vanishes.
    """
    if len(field) != L:
        raise ValueError(f"field has {len(field)} sites, segment has {L}")
    bound = lemma1_bound(field.K, L)
    space = ConfigSpace(L, N)
    if space.degenerate:
        return PencilResult(0.0, bound, tolerance, "none", 1, degenerate=True)
    measure = CanonicalMeasure(field, N)
    A = build_single_exchange(space, measure, 0, L - 1)
    _, B = exchange_form(space, measure, _segment_bonds(L), label="segment bonds")
    res = pencil_ratio(A, B, bound=bound, tolerance=tolerance)
    res.info.update(L=L, N=N, K=field.K, bound_homogeneous=L - 1)
    return res


def lemma1_field(L: int, K: float, seed: int) -> DisorderField:
    """Random field quantized to the ``K j / L`` grid with both ends at ``K``."""
    f = generate_iid(L, K, seed)
    if K > 0:
        f = quantize_to_grid(f, L)
    return force_endpoints(f)


# --- gap scaling -----------------------------------------------------------

@dataclass
class InstanceRow:
    d: int
    L: int
    N: int
    K: float
    seed: int | None
    quantity: str
    value: float
    method: str = ""
    residual: float = math.nan

    def as_dict(self) -> dict:
        return {"d": self.d, "L": self.L, "N": self.N, "K": self.K, "seed": self.seed,
                "quantity": self.quantity, "value": self.value, "method": self.method,
                "residual": self.residual}


def default_n_rule(n_sites: int) -> int:
    return n_sites // 2


def instance_field(n_sites: int, K: float, seed: int | None) -> DisorderField:
    if K == 0 or seed is None:
        return zero_field(n_sites)
    return generate_iid(n_sites, K, seed)


def kawasaki_gap(geom: LatticeGeometry, N: int, field: DisorderField, method: str = "auto") -> GapResult:
    space = ConfigSpace(geom.n_sites, N)
    measure = CanonicalMeasure(field, N, geom)
    if space.degenerate:
        return GapResult(math.nan, "none", 0.0, degenerate=True)
    return spectral_gap(build_kawasaki(space, measure, geom)[1], method=method)


def bl_gap(n_sites: int, N: int, field: DisorderField, method: str = "auto") -> GapResult:
    space = ConfigSpace(n_sites, N)
    if space.degenerate:
        return GapResult(math.nan, "none", 0.0, degenerate=True)
    return spectral_gap(build_bl(space, CanonicalMeasure(field, N))[1], method=method)


def sector_gaps(geom: LatticeGeometry, field: DisorderField | None = None) -> dict[int, float]:
    """Kawasaki gap in every nondegenerate sector ``N = 1..n-1``."""
    field = field or zero_field(geom.n_sites)
    return {N: kawasaki_gap(geom, N, field).gap for N in range(1, geom.n_sites)}


@dataclass
class ScanResult:
    rows: list[InstanceRow]
    band_ratio: float
    threshold: float
    excluded: list[InstanceRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.band_ratio <= self.threshold


def thm3_instance(d: int, L: int, N: int, K: float, seed: int | None, method: str = "auto") -> InstanceRow:
    geom = build_box(d, L)
    g = kawasaki_gap(geom, N, instance_field(geom.n_sites, K, seed), method)
    if g.degenerate:
        return InstanceRow(d, L, N, K, seed, "gap*L^2", math.nan, "degenerate", 0.0)
    return InstanceRow(d, L, N, K, seed, "gap*L^2", g.gap * L * L, g.method, g.residual)


def certify_thm3(L_list: Iterable[int], d: int = 1, K: float = 0.0, seeds: Sequence[int | None] = (None,),
                 n_rule: Callable[[int], int] = default_n_rule, band_ratio: float = 3.0,
                 residual_tol: float = 1e-8, method: str = "auto",
                 mapper: Callable = map) -> ScanResult:
    """Kawasaki gap times ``L^2`` over box sizes; passes if max/min stays within ``band_ratio``."""
    jobs = [(d, L, n_rule(L ** d), K, s, method) for L in L_list for s in seeds]
    rows, excluded = [], []
    for row in mapper(_thm3_job, jobs):
        if not math.isfinite(row.value) or row.residual > residual_tol:
            excluded.append(row)
        else:
            rows.append(row)
    values = [r.value for r in rows]
    ratio = max(values) / min(values) if values else math.inf
    return ScanResult(rows, ratio, band_ratio, excluded)


def _thm3_job(args):
    return thm3_instance(*args)


def c_emp(n_sites: int, N: int, field: DisorderField) -> float:
    """``|Lambda| / gap(D_BL)``, the empirical variance-to-BL constant."""
    g = bl_gap(n_sites, N, field)
    return math.nan if g.degenerate else n_sites / g.gap


def c_emp_pencil(n_sites: int, N: int, field: DisorderField) -> float:
    """Same constant from the pencil ``(Var, D_BL)``."""
    space = ConfigSpace(n_sites, N)
    measure = CanonicalMeasure(field, N)
    res = pencil_ratio(variance_form(measure, space), build_bl(space, measure)[1])
    return n_sites * res.lambda_max


@dataclass
class TrendResult:
    rows: list[InstanceRow]
    per_size: dict[int, float]
    spread: float
    growth: float
    spread_threshold: float | None
    trend_factor: float

    @property
    def passed(self) -> bool:
        spread_ok = self.spread_threshold is None or self.spread <= self.spread_threshold
        return spread_ok and self.growth <= self.trend_factor


def certify_thm1(sizes: Sequence[int], K: float = 0.0, seeds: Sequence[int | None] = (None,),
                 n_rule: Callable[[int], int] = default_n_rule, spread_threshold: float | None = 0.25,
                 trend_factor: float = 1.2, mapper: Callable = map) -> TrendResult:
    """``C_emp`` per size; per-size value is the maximum over seeds.

    ``spread`` is (max - min) / min across sizes, ``growth`` the ratio of the
    largest size's value to the smallest size's. ``spread_threshold=None``
    checks growth only.
    """
    jobs = [(n, n_rule(n), K, s) for n in sizes for s in seeds]
    rows = list(mapper(_thm1_job, jobs))
    per_size: dict[int, float] = {}
    for r in rows:
        if math.isfinite(r.value):
            per_size[r.L] = max(per_size.get(r.L, -math.inf), r.value)
    vals = [per_size[n] for n in sorted(per_size)]
    spread = (max(vals) - min(vals)) / min(vals) if vals else math.inf
    growth = vals[-1] / vals[0] if vals else math.inf
    return TrendResult(rows, per_size, spread, growth, spread_threshold, trend_factor)


def _thm1_job(args):
    n, N, K, seed = args
    return InstanceRow(1, n, N, K, seed, "C_emp", c_emp(n, N, instance_field(n, K, seed)), "dense")


# --- composed Theorem 3 chain ---------------------------------------------

@dataclass
class ChainResult:
    inverse_gap_kawasaki: float
    inverse_gap_bl: float
    max_bond_load: float
    composed: float
    certified: float
    pair_ratios: dict[tuple[int, int], float]

    @property
    def dominates(self) -> bool:
        return self.composed >= self.inverse_gap_kawasaki * (1 - 1e-9)


def compose_thm3_bound(geom: LatticeGeometry, N: int, field: DisorderField) -> ChainResult:
    """Rebuild the variance bound through BL and canonical-path comparisons.

    For every site pair the exchange form is compared with the bond forms on
    its canonical path. Summing the pair constants over the pairs routed
    through a bond gives that bond's load; the worst load times ``1/gap_BL``
    bounds ``1/gap_Kawasaki``. ``certified`` uses the analytic per-pair
    constant ``e^{13K}`` times the number of path sites instead.
    """
    space = ConfigSpace(geom.n_sites, N)
    measure = CanonicalMeasure(field, N, geom)
    if space.degenerate:
        raise ValueError("degenerate sector has no gap")
    _, kaw = build_kawasaki(space, measure, geom)
    _, bl = build_bl(space, measure)
    inv_kaw = 1.0 / spectral_gap(kaw).gap
    inv_bl = 1.0 / spectral_gap(bl).gap
    bond_forms = {b: build_single_exchange(space, measure, *b) for b in geom.bonds}
    load = {b: 0.0 for b in geom.bonds}
    load_cert = {b: 0.0 for b in geom.bonds}
    ratios = {}
    for x in range(geom.n_sites):
        for y in range(x + 1, geom.n_sites):
            path = canonical_path(geom, x, y)
            if path.length == 1:
                lam = 1.0
            else:
                A = build_single_exchange(space, measure, x, y)
                B = QuadraticForm(sum(bond_forms[b].matrix for b in path.bonds), A.mu, "path", space)
                lam = pencil_ratio(A, B, method="dense").lambda_max
            ratios[(x, y)] = lam
            cert = math.exp(13 * field.K) * len(path.sites)
            for b in path.bonds:
                load[b] += lam
                load_cert[b] += cert
    worst = max(load.values())
    return ChainResult(inv_kaw, inv_bl, worst, inv_bl * worst, inv_bl * max(load_cert.values()), ratios)
