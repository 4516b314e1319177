import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdjp.errors import LengthMismatch, Unsupported
from cdjp.permutation import (Permutation, PermutationSet, apply, compose, full_set, greedy_max_hamming_set,
                              hamming, inverse, min_pairwise_hamming)

perms9 = st.permutations(list(range(9))).map(Permutation)


def test_full_set():
    ps = full_set(4)
    assert len(ps) == 24
    assert ps[0].mapping == (0, 1, 2, 3)
    assert [tuple(r) for r in ps.perms] == sorted(itertools.permutations(range(4)))
    for i in range(24):
        assert sorted(ps[i].mapping) == [0, 1, 2, 3]
        assert ps.id_of(ps[i]) == i


def test_full_set_only_for_four():
    with pytest.raises(Unsupported):
        full_set(9)


def test_apply_examples():
    assert apply(Permutation((1, 0, 2, 3)), ["A", "B", "C", "D"]) == ["B", "A", "C", "D"]
    assert apply(Permutation.identity(4), "abcd") == list("abcd")
    arr = np.arange(12).reshape(4, 3)
    np.testing.assert_array_equal(apply(Permutation((3, 2, 1, 0)), arr), arr[::-1])
    with pytest.raises(LengthMismatch):
        apply(Permutation.identity(3), [1, 2])


def test_inverse_examples():
    assert inverse(Permutation((2, 0, 1))).mapping == (1, 2, 0)
    assert inverse(Permutation.identity(5)) == Permutation.identity(5)


def test_inverse_involution_many():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p = Permutation(tuple(rng.permutation(9)))
        assert inverse(inverse(p)) == p


@given(perms9)
def test_apply_inverse_round_trip(p):
    x = list("abcdefghi")
    assert apply(p, apply(inverse(p), x)) == x
    assert apply(inverse(p), apply(p, x)) == x


@given(perms9, perms9)
def test_compose_matches_sequential_apply(p, q):
    x = list(range(10, 19))
    assert apply(compose(p, q), x) == apply(p, apply(q, x))


def test_hamming_examples():
    p = Permutation((0, 1, 2, 3))
    assert hamming(p, p) == 0
    assert hamming(p, Permutation((1, 0, 2, 3))) == 2
    with pytest.raises(LengthMismatch):
        hamming(p, Permutation.identity(3))


@given(perms9, perms9)
def test_hamming_symmetric(p, q):
    assert hamming(p, q) == hamming(q, p)


def test_not_a_permutation():
    with pytest.raises(ValueError):
        Permutation((0, 0, 1))


def test_greedy_k1():
    ps = greedy_max_hamming_set(9, 1, seed=0)
    assert len(ps) == 1


def test_greedy_k2_reaches_full_distance():
    # brute force over the step-2 candidate pool: some candidate is a
    # derangement of the first choice, so the max-min distance is 9
    ps = greedy_max_hamming_set(9, 2, seed=0)
    assert hamming(ps[0], ps[1]) == 9


def test_greedy_tie_break_is_lexicographic():
    rng = np.random.default_rng(0)
    first = rng.permuted(np.tile(np.arange(9, dtype=np.uint8), (1, 1)), axis=1)[0]
    pool = rng.permuted(np.tile(np.arange(9, dtype=np.uint8), (10_000, 1)), axis=1)
    d = (pool != first).sum(axis=1)
    best = sorted(tuple(r) for r in pool[d == d.max()])[0]
    ps = greedy_max_hamming_set(9, 2, seed=0)
    assert tuple(int(v) for v in ps.perms[1]) == best


def test_greedy_deterministic_and_indexed():
    a = greedy_max_hamming_set(9, 25, seed=7, pool_size=300)
    b = greedy_max_hamming_set(9, 25, seed=7, pool_size=300)
    np.testing.assert_array_equal(a.perms, b.perms)
    for i in range(len(a)):
        assert a.id_of(a[i]) == i


def test_greedy_beats_random_subset_small():
    ps = greedy_max_hamming_set(9, 50, seed=1, pool_size=2000)
    rng = np.random.default_rng(1)
    rand = np.array([rng.permutation(9) for _ in range(50)])
    assert min_pairwise_hamming(ps.perms) >= min_pairwise_hamming(rand)


def test_min_pairwise_hamming_brute_force():
    rng = np.random.default_rng(2)
    perms = np.array([rng.permutation(6) for _ in range(30)])
    ref = min(int((perms[i] != perms[j]).sum()) for i in range(30) for j in range(i))
    assert min_pairwise_hamming(perms) == ref


def test_json_round_trip(tmp_path):
    ps = greedy_max_hamming_set(9, 10, seed=3, pool_size=100)
    path = tmp_path / "p.json"
    ps.save(path)
    back = PermutationSet.load(path)
    np.testing.assert_array_equal(back.perms, ps.perms)
    assert back.meta == {"kind": "greedy", "seed": 3, "pool_size": 100}
    assert back.digest() == ps.digest()


def test_duplicate_perms_rejected():
    with pytest.raises(ValueError):
        PermutationSet(4, np.array([[0, 1, 2, 3], [0, 1, 2, 3]]))
