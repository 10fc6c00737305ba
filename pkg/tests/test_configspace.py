import itertools
import time
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bernoulli_gap.configspace import ConfigSpace, Configuration, apply_flip, apply_swap


def test_empty_space_has_one_state():
    space = ConfigSpace(5, 0)
    assert space.size == 1 and space.rank(Configuration(0, 5)) == 0


def test_small_space_ranks():
    space = ConfigSpace(4, 2)
    ranks = [space.rank(Configuration(m, 4)) for m in space.states]
    assert space.size == 6 and ranks == list(range(6))


def test_enumeration_matches_subsets_in_numeric_order():
    for n, N in [(6, 3), (7, 2), (8, 0), (5, 5)]:
        expected = sorted(sum(1 << x for x in c) for c in itertools.combinations(range(n), N))
        assert ConfigSpace(n, N).states.tolist() == expected


def test_rank_errors():
    space = ConfigSpace(4, 2)
    with pytest.raises(ValueError):
        space.rank(Configuration.from_string("1110"))
    with pytest.raises((ValueError, IndexError)):
        space.unrank(6)


@given(st.lists(st.booleans(), min_size=20, max_size=20).filter(lambda v: sum(v) == 10))
def test_round_trip_large_space(occ):
    space = ConfigSpace(20, 10)
    eta = Configuration.from_occupancy(occ)
    assert space.unrank(space.rank(eta)) == eta


def test_round_trip_random_batch():
    space = ConfigSpace(20, 10)
    rng = np.random.default_rng(3)
    for _ in range(1000):
        occ = np.zeros(20, dtype=int)
        occ[rng.choice(20, 10, replace=False)] = 1
        eta = Configuration.from_occupancy(occ)
        assert space.unrank(space.rank(eta)) == eta


def test_rank_many_agrees_with_rank():
    space = ConfigSpace(9, 4)
    assert np.array_equal(space.rank_many(space.states), np.arange(space.size))


def test_full_enumeration_is_fast_and_increasing():
    start = time.perf_counter()
    space = ConfigSpace(20, 10)
    states = space.states
    elapsed = time.perf_counter() - start
    assert space.size == 184756 and np.all(np.diff(states) > 0)
    assert elapsed < 1.0


def test_swap_examples():
    eta = Configuration.from_string("1000")
    assert str(apply_swap(eta, 0, 3)) == "0001"
    same = Configuration.from_string("1001")
    assert apply_swap(same, 0, 3) == same


def test_self_swap_is_flagged_identity():
    eta = Configuration.from_string("10")
    with pytest.warns(UserWarning):
        assert apply_swap(eta, 1, 1) == eta


def test_flip_examples():
    assert str(apply_flip(Configuration.from_string("00"), 0)) == "10"


@given(st.integers(0, 2 ** 10 - 1), st.integers(0, 9), st.integers(0, 9))
def test_swap_and_flip_properties(bits, x, y):
    eta = Configuration(bits, 10)
    f = apply_flip(eta, x)
    assert apply_flip(f, x) == eta and abs(f.N - eta.N) == 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = apply_swap(eta, x, y)
        assert apply_swap(s, x, y) == eta
    assert s.N == eta.N
    space = ConfigSpace(10, eta.N)
    assert space.unrank(space.rank(s)) == s


def test_string_form():
    assert str(Configuration.from_string("0110")) == "0110"
    assert Configuration.from_string("0110").occupancy().tolist() == [0, 1, 1, 0]
