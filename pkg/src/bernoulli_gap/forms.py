"""Reversible generators and Dirichlet forms for exchange and flip dynamics.

Convention: forms sum over *unordered* site pairs,

    D(f) = sum_eta mu(eta) sum_{x,y} (f(T_xy eta) - f(eta))^2,

and the jump rate of a move ``eta -> eta'`` is ``1 + mu(eta') / mu(eta)``.
With these rates ``<f, -Gen f>_mu == D(f)`` holds exactly, and the rates
reduce to ``1 + exp(alpha_y - alpha_x)`` for a particle hopping ``x -> y``
and to ``1 + exp(alpha_x (1 - 2 eta_x))`` for a flip at ``x``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .configspace import ConfigSpace
from .ensemble import CanonicalMeasure, GrandMeasure
from .lattice import LatticeGeometry

PAIR_CONVENTION = "unordered"
MAX_GLAUBER_SITES = 20


class DegenerateSpaceError(ValueError):
    """The sector holds a single configuration, so there is no dynamics."""


@dataclass(frozen=True, eq=False)
class SparseGenerator:
    """Rate matrix with ``matrix[i, j]`` the rate of ``i -> j`` and rows summing to 0."""

    matrix: sp.csr_matrix
    mu: np.ndarray
    label: str
    degenerate: bool = False

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def transitions(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        off = sp.triu(self.matrix, 1) + sp.tril(self.matrix, -1)
        off = off.tocoo()
        order = np.lexsort((off.col, off.row))
        return off.row[order], off.col[order], off.data[order]

    def row_sum_error(self) -> float:
        return float(np.max(np.abs(np.asarray(self.matrix.sum(axis=1)).ravel()), initial=0.0))

    def detailed_balance_error(self) -> float:
        """Largest relative mismatch of ``mu_i c_ij`` against ``mu_j c_ji``."""
        i, j, c = self.transitions()
        if c.size == 0:
            return 0.0
        back = np.asarray(self.matrix[j, i]).ravel()
        lhs, rhs = self.mu[i] * c, self.mu[j] * back
        return float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(lhs), np.abs(rhs))))


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Symmetric positive semidefinite ``Q`` with ``D(f) = f @ Q @ f``.

    ``mu`` is the base measure on the same state space; ``matrix`` may be
    sparse or a dense array.
    """

    matrix: sp.spmatrix | np.ndarray
    mu: np.ndarray
    label: str
    space: ConfigSpace | None = None
    degenerate: bool = False
    convention: str = field(default=PAIR_CONVENTION)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def __call__(self, f: np.ndarray) -> float:
        f = np.asarray(f, dtype=float)
        return float(f @ (self.matrix @ f))

    def scaled(self, c: float) -> "QuadraticForm":
        return QuadraticForm(self.matrix * c, self.mu, f"{c:g}*{self.label}", self.space, self.degenerate)

    def compatible(self, other: "QuadraticForm") -> bool:
        return self.size == other.size and np.array_equal(self.mu, other.mu)

    def triplets(self) -> list[tuple[int, int, float]]:
        m = sp.coo_matrix(self.matrix)
        order = np.lexsort((m.col, m.row))
        return [(int(m.row[k]), int(m.col[k]), float(m.data[k])) for k in order if m.data[k] != 0]

    def dump(self, dest) -> None:
        """Write sorted ``row col value`` triplets, one per line."""
        lines = "".join(f"{r} {c} {v!r}\n" for r, c, v in self.triplets())
        if hasattr(dest, "write"):
            dest.write(lines)
        else:
            with open(dest, "w") as fh:
                fh.write(lines)


def _laplacian(n: int, i: np.ndarray, j: np.ndarray, w: np.ndarray) -> sp.csr_matrix:
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    data = np.concatenate([w, w, -w, -w])
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def _rate_matrix(n: int, i: np.ndarray, j: np.ndarray, fwd: np.ndarray, bwd: np.ndarray) -> sp.csr_matrix:
    off = sp.csr_matrix((np.concatenate([fwd, bwd]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                        shape=(n, n))
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def _exchange_moves(space: ConfigSpace, alpha: np.ndarray, pairs: Iterable[tuple[int, int]],
                    skip_equal: bool = True):
    """Yield ``(pair_index, i, j, log_ratio)`` blocks, one per site pair.

    ``i`` are states with a particle at ``x`` and a hole at ``y``; ``j`` their
    images under the swap; ``log_ratio = log mu(j) - log mu(i)``.
    """
    states = space.states
    for k, (x, y) in enumerate(pairs):
        bx, by = np.int64(1) << np.int64(x), np.int64(1) << np.int64(y)
        occ_x, occ_y = (states & bx) != 0, (states & by) != 0
        sel = np.flatnonzero(occ_x & ~occ_y)
        i = sel
        j = space.rank_many(states[sel] ^ (bx | by))
        yield k, i, j, np.full(sel.size, alpha[y] - alpha[x])
        if not skip_equal:
            same = np.flatnonzero(occ_x == occ_y)
            yield k, same, same, np.zeros(same.size)


def _assemble(space: ConfigSpace, mu: np.ndarray, blocks, weights: Sequence[float] | None, label: str):
    n = space.size
    I, J, W, F, B = [], [], [], [], []
    for k, i, j, lr in blocks:
        c = 1.0 if weights is None else float(weights[k])
        fwd = 1.0 + np.exp(lr)
        bwd = 1.0 + np.exp(-lr)
        I.append(i)
        J.append(j)
        W.append(c * (mu[i] + mu[j]))
        F.append(c * fwd)
        B.append(c * bwd)
    if I:
        i, j, w = np.concatenate(I), np.concatenate(J), np.concatenate(W)
        fwd, bwd = np.concatenate(F), np.concatenate(B)
    else:
        i = j = np.zeros(0, dtype=np.int64)
        w = fwd = bwd = np.zeros(0)
    form = QuadraticForm(_laplacian(n, i, j, w), mu, label, space, degenerate=space.degenerate)
    loops = i == j
    gen = SparseGenerator(_rate_matrix(n, i[~loops], j[~loops], fwd[~loops], bwd[~loops]), mu, label,
                          degenerate=space.degenerate)
    return gen, form


def _check_measure(space: ConfigSpace, measure: CanonicalMeasure) -> None:
    if not space.fixed_n or space.N != measure.N or space.n_sites != measure.n_sites:
        raise ValueError("space and canonical measure do not match")


def _check_connected(geom: LatticeGeometry) -> None:
    if geom.n_sites == 1:
        return
    b = geom.bond_array
    adj = sp.coo_matrix((np.ones(len(b)), (b[:, 0], b[:, 1])), shape=(geom.n_sites,) * 2)
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise ValueError("geometry is not connected by nearest-neighbour bonds")


def exchange_form(space: ConfigSpace, measure: CanonicalMeasure, pairs: Sequence[tuple[int, int]],
                  weights: Sequence[float] | None = None, label: str = "exchange",
                  skip_equal: bool = True) -> tuple[SparseGenerator, QuadraticForm]:
    """Generator and form of exchanges over the given site pairs, optionally weighted."""
    _check_measure(space, measure)
    if weights is not None:
        if len(weights) != len(pairs):
            raise ValueError("need one weight per pair")
        if any(w <= 0 for w in weights):
            raise ValueError("pair weights must be positive")
    for x, y in pairs:
        if x == y:
            raise ValueError(f"exchange pair ({x}, {y}) needs two distinct sites")
    mu = measure.probabilities(space)
    return _assemble(space, mu, _exchange_moves(space, measure.alpha, pairs, skip_equal), weights, label)


def build_kawasaki(space: ConfigSpace, measure: CanonicalMeasure, geom: LatticeGeometry | None = None,
                   skip_equal: bool = True) -> tuple[SparseGenerator, QuadraticForm]:
    """Nearest-neighbour exchange dynamics over the bonds of ``geom``."""
    geom = geom or measure.geom
    if geom is None:
        raise ValueError("Kawasaki dynamics needs a geometry")
    if geom.n_sites != space.n_sites:
        raise ValueError("geometry and space disagree on the number of sites")
    _check_connected(geom)
    return exchange_form(space, measure, geom.bonds, label="kawasaki", skip_equal=skip_equal)


def build_bl(space: ConfigSpace, measure: CanonicalMeasure) -> tuple[SparseGenerator, QuadraticForm]:
    """Exchanges between every unordered pair of sites."""
    pairs = list(itertools.combinations(range(space.n_sites), 2))
    return exchange_form(space, measure, pairs, label="bernoulli-laplace")


def build_single_exchange(space: ConfigSpace, measure: CanonicalMeasure, x: int, y: int) -> QuadraticForm:
    """The form ``f -> E_mu[(f(T_xy eta) - f(eta))^2]``."""
    return exchange_form(space, measure, [(x, y)], label=f"exchange({x},{y})")[1]


def build_glauber(space: ConfigSpace, measure: GrandMeasure) -> tuple[SparseGenerator, QuadraticForm]:
    """Single-site flips on the full space ``{0,1}^n``."""
    if space.fixed_n:
        raise ValueError("Glauber dynamics lives on the full space (N=None)")
    if space.n_sites > MAX_GLAUBER_SITES:
        raise ValueError(f"Glauber exact build limited to {MAX_GLAUBER_SITES} sites")
    if space.n_sites != measure.n_sites:
        raise ValueError("space and measure disagree on the number of sites")
    states = space.states
    mu = measure.probabilities(space)

    def flips():
        for x in range(space.n_sites):
            bx = np.int64(1) << np.int64(x)
            i = np.flatnonzero((states & bx) == 0)
            yield x, i, i | bx, np.full(i.size, measure.alpha[x])

    return _assemble(space, mu, flips(), None, "glauber")


def weighted_sum(forms: Sequence[QuadraticForm], weights: Sequence[float], label: str = "weighted-sum") -> QuadraticForm:
    """``sum_i w_i Q_i`` for forms over the same space and measure."""
    if len(forms) != len(weights) or not forms:
        raise ValueError("need one positive weight per form")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    first = forms[0]
    for q in forms[1:]:
        if not first.compatible(q):
            raise ValueError("cannot add forms over different spaces or measures")
    total = sum(float(w) * q.matrix for w, q in zip(weights, forms))
    if sp.issparse(total):
        total = total.tocsr()
    return QuadraticForm(total, first.mu, label, first.space, first.degenerate)


def nearest_neighbour_forms(space: ConfigSpace, measure: CanonicalMeasure,
                            pairs: Sequence[tuple[int, int]]) -> list[QuadraticForm]:
    return [build_single_exchange(space, measure, x, y) for x, y in pairs]


def variance_form(measure: CanonicalMeasure | GrandMeasure, space: ConfigSpace | None = None) -> QuadraticForm:
    """Dense ``diag(mu) - mu mu^T``, so that ``Var_mu(f) = f @ Q @ f``."""
    space = space or measure.space()
    mu = measure.probabilities(space)
    return QuadraticForm(np.diag(mu) - np.outer(mu, mu), mu, "variance", space, space.degenerate)
