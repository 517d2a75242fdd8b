import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linespec.metrics import (
    false_negative_rate,
    matched_distance,
    min_pairing_distance,
    score,
)


# Reference implementations written straight from the definitions.

def cdist(a, b):
    d = abs((a - b) % 1.0)
    return min(d, 1.0 - d)


def ref_fn(truth, est, n):
    misses = 0
    for f in truth:
        if not any(cdist(f, e) <= 0.5 / n for e in est):
            misses += 1
    return misses / len(truth)


def ref_md(truth, est, n):
    gate = 0.5 / n
    a = [min(cdist(f, e) for e in est) for f in truth]
    b = [min(cdist(f, e) for f in truth) for e in est]
    a = [x for x in a if x <= gate]
    b = [x for x in b if x <= gate]
    parts = [sum(x) / len(x) for x in (a, b) if x]
    if not parts:
        return 0.0
    return n * (sum(parts) / len(parts))


def ref_pairing(truth, est):
    best = None
    for perm in itertools.permutations(range(len(est))):
        total = math.fsum(cdist(truth[j], est[k]) ** 2 for j, k in enumerate(perm))
        best = total if best is None or total < best else best
    return best


freqs = st.lists(st.floats(0, 1, exclude_max=True, allow_subnormal=False), min_size=1, max_size=5)


def near_copies(draw_base, jitter):
    return [(f + j) % 1.0 for f, j in zip(draw_base, jitter)]


class TestFalseNegative:
    def test_exact(self):
        assert false_negative_rate([0.1, 0.4], [0.4, 0.1], 50) == 0

    def test_all_far(self):
        assert false_negative_rate([0.1, 0.4], [0.2, 0.7], 50) == 1

    def test_half(self):
        assert false_negative_rate([0.2, 0.5], [0.2, 0.9], 50) == 0.5

    def test_gate_is_closed_and_wraps(self):
        assert false_negative_rate([0.004], [0.996], 50) == 0
        assert false_negative_rate([0.0], [0.0125], 40) == 0
        assert false_negative_rate([0.0], [0.0126], 40) == 1


class TestMatchedDistance:
    def test_exact(self):
        assert matched_distance([0.1, 0.4], [0.1, 0.4], 50) == 0

    def test_quarter_resolution(self):
        n = 50
        assert matched_distance([0.5], [0.5 + 1 / (4 * n)], n) == pytest.approx(0.25, abs=1e-12)

    def test_gated_out_is_zero(self):
        s = score([0.1], [0.6], 50)
        assert s.md == 0 and s.counted_matches == 0 and s.fn_rate == 1

    def test_bounded_by_half(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            t = rng.uniform(size=4)
            e = np.mod(t + rng.normal(0, 0.01, 4), 1)
            assert matched_distance(t, e, 50) <= 0.5


class TestPairing:
    def test_permuted(self):
        assert min_pairing_distance([0.1, 0.2, 0.7], [0.7, 0.1, 0.2]) == 0

    def test_swap(self):
        assert min_pairing_distance([0.1, 0.2], [0.2, 0.1]) == 0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            min_pairing_distance([0.1], [0.1, 0.2])

    def test_random_m3_against_permutations(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            t, e = rng.uniform(size=3), rng.uniform(size=3)
            assert min_pairing_distance(t, e) == ref_pairing(list(t), list(e))


@settings(max_examples=300, deadline=None)
@given(truth=freqs, est=freqs, n=st.integers(2, 100))
def test_against_reference(truth, est, n):
    assert false_negative_rate(truth, est, n) == ref_fn(truth, est, n)
    assert matched_distance(truth, est, n) == ref_md(truth, est, n)


@settings(max_examples=200, deadline=None)
@given(truth=freqs, data=st.data(), n=st.integers(10, 60))
def test_against_reference_near_hits(truth, data, n):
    # estimates close to the truth exercise the gate far more than uniform draws
    jit = data.draw(st.lists(st.floats(-1.5 / n, 1.5 / n), min_size=len(truth), max_size=len(truth)))
    est = near_copies(truth, jit)
    assert false_negative_rate(truth, est, n) == ref_fn(truth, est, n)
    assert matched_distance(truth, est, n) == ref_md(truth, est, n)
    assert min_pairing_distance(truth, est) == ref_pairing(truth, est)


@settings(max_examples=100, deadline=None)
@given(truth=freqs, est=freqs, n=st.integers(2, 100), data=st.data())
def test_permutation_invariance(truth, est, n, data):
    pt = data.draw(st.permutations(truth))
    pe = data.draw(st.permutations(est))
    assert false_negative_rate(pt, pe, n) == false_negative_rate(truth, est, n)
    assert matched_distance(pt, pe, n) == pytest.approx(matched_distance(truth, est, n), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(truth=freqs, n=st.integers(5, 100), shift=st.floats(0, 1), data=st.data())
def test_circular_shift_invariance(truth, n, shift, data):
    jit = data.draw(st.lists(st.floats(-1 / n, 1 / n), min_size=len(truth), max_size=len(truth)))
    est = near_copies(truth, jit)
    st_truth = [(f + shift) % 1.0 for f in truth]
    st_est = [(f + shift) % 1.0 for f in est]
    # shifting rounds differently; the gate only moves for distances within 1e-12 of 1/(2n)
    if all(abs(abs(j) - 0.5 / n) > 1e-9 for j in jit):
        assert false_negative_rate(st_truth, st_est, n) == false_negative_rate(truth, est, n)
        assert matched_distance(st_truth, st_est, n) == pytest.approx(
            matched_distance(truth, est, n), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(truth=freqs, est=freqs, n=st.integers(2, 100))
def test_fn_takes_multiples_of_one_over_m(truth, est, n):
    fn = false_negative_rate(truth, est, n)
    assert 0 <= fn <= 1
    assert fn * len(truth) == pytest.approx(round(fn * len(truth)))
