import numpy as np
import pytest
from hypothesis import given, strategies as st

from qd3pm.diffusion import (depolarize_prob, dm_depolarize, forward_dist, sample_xt,
                             sample_xt_batch)
from qd3pm.schedule import cosine_schedule
from qd3pm.sim import BitString

mpmath = pytest.importorskip("mpmath")


def test_endpoints_exact():
    s = cosine_schedule(30, 0.008)
    assert s.alpha_bar[0] == 1.0
    assert s.alpha_bar[30] == 0.0
    assert s.alpha_t(30) == 0.0


def test_alpha_bar_15_arbitrary_precision():
    mpmath.mp.dps = 40
    g = lambda t: mpmath.cos((mpmath.mpf(t) / 30 + mpmath.mpf("0.008")) / (1 + mpmath.mpf("0.008"))
                             * mpmath.pi / 2) ** 2
    ref = float(g(15) / g(0))
    assert cosine_schedule().alpha_bar_t(15) == pytest.approx(ref, abs=1e-15)
    # frozen value
    assert ref == pytest.approx(0.4938435904406377, abs=1e-15)


@given(st.integers(1, 200), st.floats(1e-4, 0.5))
def test_schedule_invariants(T, s):
    sch = cosine_schedule(T, s)
    ab = sch.alpha_bar
    assert np.all(np.diff(ab) < 0)
    assert np.all((ab >= 0) & (ab <= 1))
    np.testing.assert_allclose(np.cumprod(sch.alpha[1:]), ab[1:], atol=1e-12)


@pytest.mark.parametrize("T,s", [(0, 0.008), (30, 0.0), (30, -1.0), (2.5, 0.008)])
def test_schedule_rejects(T, s):
    with pytest.raises(ValueError):
        cosine_schedule(T, s)


def test_schedule_accessors_and_immutability():
    s = cosine_schedule()
    with pytest.raises(ValueError):
        s.alpha_t(0)
    with pytest.raises(ValueError):
        s.alpha_bar_t(31)
    with pytest.raises(ValueError):
        s.alpha_bar[3] = 0.5


# -- depolarizing channel ------------------------------------------------------

def test_depolarize_examples():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    np.testing.assert_allclose(depolarize_prob(p, 1.0), p)
    np.testing.assert_allclose(depolarize_prob(p, 0.0), 0.25)
    np.testing.assert_allclose(depolarize_prob([1, 0, 0, 0], 0.5), [0.625, 0.125, 0.125, 0.125])
    with pytest.raises(ValueError):
        depolarize_prob(p, 1.5)


probvecs = st.integers(1, 6).flatmap(
    lambda n: st.lists(st.floats(0, 1), min_size=2**n, max_size=2**n)
    .filter(lambda v: sum(v) > 1e-3).map(lambda v: np.array(v) / sum(v)))


@given(probvecs, st.floats(0, 1), st.floats(0, 1))
def test_semigroup_and_fixed_point(p, a, b):
    np.testing.assert_allclose(depolarize_prob(depolarize_prob(p, a), b), depolarize_prob(p, a * b),
                               atol=1e-12)
    u = np.full(p.size, 1 / p.size)
    np.testing.assert_allclose(depolarize_prob(u, a), u, atol=1e-15)


@given(probvecs, st.floats(0, 1))
def test_dense_channel_agrees_and_stays_diagonal(p, a):
    out = dm_depolarize(np.diag(p).astype(complex), a)
    np.testing.assert_allclose(np.real(np.diag(out)), depolarize_prob(p, a), atol=1e-14)
    assert np.max(np.abs(out - np.diag(np.diag(out)))) < 1e-14
    with pytest.raises(ValueError):
        dm_depolarize(np.diag(p), -0.1)


def test_dm_depolarize_examples():
    rng = np.random.default_rng(0)
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    dm = np.outer(v, v.conj()) / np.vdot(v, v)
    np.testing.assert_allclose(dm_depolarize(dm, 1.0), dm)
    np.testing.assert_allclose(dm_depolarize(dm, 0.0), np.eye(4) / 4, atol=1e-15)


# -- forward marginal ----------------------------------------------------------

def test_forward_examples():
    s = cosine_schedule()
    x0 = BitString.from_str("101")
    np.testing.assert_array_equal(forward_dist(x0, 0, s), np.eye(8)[5])
    np.testing.assert_array_equal(forward_dist(x0, 30, s), np.full(8, 1 / 8))
    with pytest.raises(ValueError):
        forward_dist(x0, 31, s)


@given(st.integers(1, 6), st.integers(0, 30), st.data())
def test_forward_matches_fold(n, t, data):
    s = cosine_schedule()
    x0 = BitString.from_index(data.draw(st.integers(0, 2**n - 1)), n)
    p = np.eye(2**n)[x0.index]
    for i in range(1, t + 1):
        p = depolarize_prob(p, s.alpha_t(i))
    np.testing.assert_allclose(forward_dist(x0, t, s), p, atol=1e-12)


def _within_3sigma(counts, p):
    n = counts.sum()
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma + 1e-9), (counts, n * p)


def test_sample_xt_frequencies():
    s = cosine_schedule()
    rng = np.random.default_rng(7)
    x0 = BitString.from_str("0110")
    assert all(sample_xt(x0, 0, s, rng) == x0 for _ in range(50))
    draws = sample_xt_batch(np.full(100000, x0.index), 4, np.full(100000, 15), s, rng)
    _within_3sigma(np.bincount(draws, minlength=16), forward_dist(x0, 15, s))
    draws = sample_xt_batch(np.full(100000, x0.index), 4, np.full(100000, 30), s, rng)
    _within_3sigma(np.bincount(draws, minlength=16), np.full(16, 1 / 16))


def test_sample_xt_seeded():
    s = cosine_schedule()
    x0 = BitString.from_str("0110")
    a = [sample_xt(x0, 12, s, np.random.default_rng(3)) for _ in range(5)]
    assert len(set(a)) == 1
