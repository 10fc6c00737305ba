import io
import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from bernoulli_gap.configspace import ConfigSpace
from bernoulli_gap.disorder import DisorderField, generate_iid, zero_field
from bernoulli_gap.ensemble import CanonicalMeasure, GrandMeasure
from bernoulli_gap.forms import (build_bl, build_glauber, build_kawasaki, build_single_exchange,
                                 variance_form, weighted_sum)
from bernoulli_gap.lattice import build_box

from oracles import dense_generator, double_sum_form, mask_of, reversible_gap


def kawasaki(L, N, field=None, d=1, boundary="free"):
    geom = build_box(d, L, boundary)
    field = zero_field(geom.n_sites) if field is None else field
    m = CanonicalMeasure(field, N, geom)
    space = m.space()
    gen, form = build_kawasaki(space, m)
    return geom, m, space, gen, form


def as_set_function(space, f):
    lookup = {int(mask): f[k] for k, mask in enumerate(space.states)}
    return lambda A: lookup[mask_of(A)]


def test_two_state_chain():
    _, _, _, gen, form = kawasaki(2, 1)
    G = gen.matrix.toarray()
    assert np.allclose(G, [[-2, 2], [2, -2]])
    assert np.allclose(np.sort(np.linalg.eigvals(G).real), [-4, 0])


def test_equal_fields_give_rate_two():
    f = DisorderField([0.3, 0.3, -0.2], 1.0)
    _, _, _, gen, _ = kawasaki(3, 1, f)
    i, j, c = gen.transitions()
    space = ConfigSpace(3, 1)
    for a, b, rate in zip(i, j, c):
        x = int(space.states[a]).bit_length() - 1
        y = int(space.states[b]).bit_length() - 1
        assert rate == pytest.approx(1 + math.exp(f.values[y] - f.values[x]), rel=1e-14)
        if {x, y} == {0, 1}:
            assert rate == pytest.approx(2.0, rel=1e-14)


@pytest.mark.parametrize("L,N,seed", [(6, 3, 0), (7, 2, 1), (8, 4, 2), (10, 5, 3), (9, 1, 4)])
def test_generator_matches_independent_build(L, N, seed):
    field = generate_iid(L, 1.0, seed)
    geom, m, space, gen, form = kawasaki(L, N, field)
    states, mu, G = dense_generator(field.values, N, geom.bonds)
    assert [mask_of(A) for A in states] == space.states.tolist()
    assert np.allclose(gen.matrix.toarray(), G, rtol=1e-12, atol=1e-12)
    assert np.allclose(m.probabilities(space), mu, rtol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_detailed_balance_and_row_sums(seed):
    field = generate_iid(10, 1.0, seed)
    N = 1 + seed % 9
    _, _, _, gen, _ = kawasaki(10, N, field)
    assert gen.detailed_balance_error() <= 1e-12
    assert gen.row_sum_error() <= 1e-12
    i, j, c = gen.transitions()
    assert np.all(c > 0)


@pytest.mark.parametrize("L,N,seed", [(5, 2, 0), (8, 3, 1), (10, 4, 2), (10, 6, 3)])
def test_form_equals_double_sum_and_generator(L, N, seed):
    field = generate_iid(L, 1.0, seed)
    geom, m, space, gen, form = kawasaki(L, N, field)
    mu = m.probabilities(space)
    G = gen.matrix
    rng = np.random.default_rng(seed)
    for trial in range(100):
        f = rng.normal(size=space.size)
        direct = float(mu @ (f * -(G @ f)))
        assert form(f) == pytest.approx(direct, rel=1e-10)
        if trial < 3:
            brute = double_sum_form(field.values, N, geom.bonds, as_set_function(space, f))
            assert form(f) == pytest.approx(brute, rel=1e-10)


@pytest.mark.parametrize("d,L,N", [(1, 6, 3), (2, 3, 4), (1, 5, 1)])
def test_kernel_is_constants(d, L, N):
    geom = build_box(d, L)
    field = generate_iid(geom.n_sites, 1.0, 3)
    _, _, space, _, form = kawasaki(L, N, field, d=d)
    mu = form.mu
    s = np.sqrt(mu)
    w = np.linalg.eigvalsh(form.dense() / s[:, None] / s[None, :])
    assert np.sum(np.abs(w) < 1e-10 * w.max()) == 1
    assert abs(form(np.ones(space.size))) < 1e-14
    assert w.min() > -1e-12


def test_skipping_equal_swaps_changes_nothing():
    geom = build_box(1, 7)
    m = CanonicalMeasure(generate_iid(7, 1.0, 5), 3, geom)
    space = m.space()
    _, with_skip = build_kawasaki(space, m, skip_equal=True)
    _, without = build_kawasaki(space, m, skip_equal=False)
    assert abs(with_skip.matrix - without.matrix).max() < 1e-15


def test_degenerate_sector_is_flagged():
    geom = build_box(1, 4)
    for N in (0, 4):
        m = CanonicalMeasure(zero_field(4), N, geom)
        gen, form = build_kawasaki(m.space(), m)
        assert form.degenerate and gen.degenerate
        assert form(np.ones(1)) == 0


def test_disconnected_geometry_rejected():
    class Broken:
        n_sites = 4
        bonds = ((0, 1), (2, 3))
        bond_array = np.array(bonds)

    m = CanonicalMeasure(zero_field(4), 2)
    with pytest.raises(ValueError):
        build_kawasaki(m.space(), m, Broken())


def test_bl_on_two_sites_is_kawasaki():
    _, m, space, _, kaw = kawasaki(2, 1)
    _, bl = build_bl(space, m)
    assert np.allclose(kaw.dense(), bl.dense())


@settings(max_examples=25)
@given(st.integers(0, 2 ** 31), st.integers(1, 5))
def test_kawasaki_below_bl(seed, N):
    field = generate_iid(6, 1.0, seed)
    _, m, space, _, kaw = kawasaki(6, N, field)
    _, bl = build_bl(space, m)
    f = np.random.default_rng(seed).normal(size=space.size)
    assert kaw(f) <= bl(f) * (1 + 1e-12)


def test_bl_gap_against_dense_oracle():
    pairs = list(itertools.combinations(range(6), 2))
    states, mu, G = dense_generator([0.0] * 6, 3, pairs)
    _, m, space, _, _ = kawasaki(6, 3)
    gen, _ = build_bl(space, m)
    assert np.allclose(gen.matrix.toarray(), G)
    assert reversible_gap(G, mu) == pytest.approx(12.0, rel=1e-10)


def test_glauber_homogeneous():
    g = GrandMeasure(zero_field(3))
    gen, form = build_glauber(g.space(), g)
    i, j, c = gen.transitions()
    assert np.allclose(c, 2.0)
    assert reversible_gap(gen.matrix.toarray(), form.mu) == pytest.approx(4.0, rel=1e-12)


def test_glauber_single_site():
    g = GrandMeasure(np.array([math.log(3)]))
    gen, form = build_glauber(g.space(), g)
    G = gen.matrix.toarray()
    assert G[0, 1] == pytest.approx(4.0, rel=1e-14)
    assert G[1, 0] == pytest.approx(4 / 3, rel=1e-14)
    assert form.mu[1] == pytest.approx(0.75, rel=1e-14)


@pytest.mark.parametrize("n,seed", [(1, 0), (2, 1), (3, 2), (4, 3)])
def test_glauber_tensorization(n, seed):
    field = generate_iid(n, 2.0, seed)
    g = GrandMeasure(field)
    gen, form = build_glauber(g.space(), g)
    expected = min(2 + 2 * math.cosh(a) for a in field.values)
    assert reversible_gap(gen.matrix.toarray(), form.mu) == pytest.approx(expected, rel=1e-10)
    assert gen.detailed_balance_error() <= 1e-12


def test_glauber_limits():
    with pytest.raises(ValueError):
        build_glauber(ConfigSpace(21, None), GrandMeasure(zero_field(21)))
    with pytest.raises(ValueError):
        build_glauber(ConfigSpace(3, 1), GrandMeasure(zero_field(3)))


def test_single_exchange():
    field = generate_iid(5, 1.0, 8)
    geom = build_box(1, 5)
    m = CanonicalMeasure(field, 2, geom)
    space = m.space()
    q = build_single_exchange(space, m, 0, 4)
    f = np.random.default_rng(0).normal(size=space.size)
    brute = double_sum_form(field.values, 2, [(0, 4)], as_set_function(space, f))
    assert q(f) == pytest.approx(brute, rel=1e-12)
    symmetric = np.array([(mask & 1) + ((mask >> 4) & 1) for mask in space.states], dtype=float)
    assert q(symmetric) == pytest.approx(0, abs=1e-15)
    bonds = [build_single_exchange(space, m, x, y) for x, y in geom.bonds]
    _, kaw = build_kawasaki(space, m)
    assert abs(weighted_sum(bonds, [1.0] * 4).matrix - kaw.matrix).max() < 1e-14
    adjacent = build_single_exchange(space, m, 1, 2)
    assert adjacent(f) == pytest.approx(double_sum_form(field.values, 2, [(1, 2)], as_set_function(space, f)))


def test_weighted_sum_rules():
    m = CanonicalMeasure(generate_iid(4, 1.0, 0), 2)
    space = m.space()
    q = build_single_exchange(space, m, 0, 1)
    assert abs(weighted_sum([q], [1.0]).matrix - q.matrix).max() == 0
    other = build_single_exchange(CanonicalMeasure(zero_field(4), 2).space(), CanonicalMeasure(zero_field(4), 2), 0, 1)
    with pytest.raises(ValueError):
        weighted_sum([q, other], [1.0, 1.0])
    with pytest.raises(ValueError):
        weighted_sum([q], [0.0])


def test_variance_form():
    m = CanonicalMeasure(generate_iid(6, 1.0, 2), 3)
    q = variance_form(m)
    f = np.random.default_rng(1).normal(size=q.size)
    mu = q.mu
    assert q(f) == pytest.approx(mu @ f ** 2 - (mu @ f) ** 2, rel=1e-12)


def test_triplet_dump():
    _, _, _, _, form = kawasaki(3, 1)
    buf = io.StringIO()
    form.dump(buf)
    rows = [tuple(line.split()) for line in buf.getvalue().splitlines()]
    keys = [(int(r), int(c)) for r, c, _ in rows]
    assert keys == sorted(keys)
    dense = np.zeros((3, 3))
    for r, c, v in rows:
        dense[int(r), int(c)] = float(v)
    assert np.array_equal(dense, form.dense())
    assert sp.issparse(form.matrix)
