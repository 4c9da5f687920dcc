import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qd3pm.denoiser import (DenoiserCircuit, DenoiserParams, circuit_gates, denoise_dist, encode,
                            make_topology, param_count, reference_denoise_dist, sample_denoised,
                            time_angle)
from qd3pm.sim import BitString, dm_from_statevector, dm_partial_trace, marginal_probs, run_circuit

T = 30


def random_params(rng, width, layers, topo, scale=1.0):
    n = param_count(width, layers, topo)
    return DenoiserParams.from_flat(rng.normal(scale=scale, size=n), width, layers, topo)


# -- topology and counts ----------------------------------------------------------

@pytest.mark.parametrize("width", [1, 3, 4, 9])
def test_topology_edges(width):
    n = width + 1
    a2a = make_topology("all-to-all", width)
    assert len(a2a.edges) == n * (n - 1) // 2
    assert list(a2a.edges) == sorted(a2a.edges)
    assert make_topology("chain", width).edges == tuple((i, i + 1) for i in range(width))
    assert make_topology("star", width).edges == tuple((0, i) for i in range(1, n))
    with pytest.raises(ValueError):
        make_topology("ring", width)


def test_param_count_examples():
    assert param_count(4, 1, make_topology("chain", 4)) == 23
    assert param_count(4, 0, make_topology("chain", 4)) == 4
    assert param_count(4, 12, make_topology("all-to-all", 4)) == 304


def test_params_flat_roundtrip():
    topo = make_topology("star", 3)
    flat = np.arange(param_count(3, 2, topo), dtype=float)
    p = DenoiserParams.from_flat(flat, 3, 2, topo)
    np.testing.assert_array_equal(p.flat(), flat)
    # declared order: w, then singles (L, N+1, 3), then entanglers (L, E)
    np.testing.assert_array_equal(p.w, [0, 1, 2])
    assert p.v_singles[0, 0, 0] == 3 and p.v_entanglers[0, 0] == 3 + 24
    with pytest.raises(ValueError):
        DenoiserParams.from_flat(flat[:-1], 3, 2, topo)
    with pytest.raises(ValueError):
        DenoiserParams(np.zeros(3), np.zeros((2, 3, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        DenoiserParams(np.array([0.0, np.nan, 0]), np.zeros((2, 4, 3)), np.zeros((2, 3)))


# -- encoding ---------------------------------------------------------------------

def test_encode_examples():
    w = np.array([0.3, -1.2, 2.0])
    # data register stays |000> when w = 0 or x_t = 0
    for wv, x in ((np.zeros(3), "111"), (w, "000")):
        psi = encode(7, BitString.from_str(x), wv, T)
        np.testing.assert_allclose(marginal_probs(psi, [1, 2, 3]), np.eye(8)[0], atol=1e-15)
    psi = encode(T, BitString.from_str("11"), np.full(2, np.pi), T)
    np.testing.assert_allclose(marginal_probs(psi, [1, 2]), np.eye(4)[3], atol=1e-15)
    a = time_angle(T, T)
    np.testing.assert_allclose(marginal_probs(psi, [0]), [np.cos(a / 2) ** 2, np.sin(a / 2) ** 2])
    with pytest.raises(ValueError):
        encode(1, BitString.from_str("11"), np.zeros(3), T)


# -- forward pass ---------------------------------------------------------------------

def test_zero_params_give_point_mass_at_zero():
    topo = make_topology("all-to-all", 3)
    p = denoise_dist(5, BitString.from_str("101"), DenoiserParams.zeros(3, 2, topo), topo, T)
    np.testing.assert_allclose(p, np.eye(8)[0], atol=1e-14)


def test_matches_dense_oracle_small():
    rng = np.random.default_rng(0)
    topo = make_topology("all-to-all", 3)
    params = random_params(rng, 3, 1, topo)
    xt = BitString.from_str("110")
    psi = run_circuit(encode(4, xt, params.w, T), circuit_gates(params, topo))
    dense = np.real(np.diag(dm_partial_trace(dm_from_statevector(psi), [0])))
    np.testing.assert_allclose(denoise_dist(4, xt, params, topo, T), dense, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(0, 3), st.sampled_from(["all-to-all", "chain", "star"]),
       st.integers(0, 2**32 - 1))
def test_batched_engine_matches_gate_by_gate(width, layers, kind, seed):
    rng = np.random.default_rng(seed)
    topo = make_topology(kind, width)
    params = random_params(rng, width, layers, topo)
    circ = DenoiserCircuit(width, layers, topo, T)
    ts = rng.integers(1, T + 1, 6)
    xs = rng.integers(0, 2**width, 6)
    batch = circ.probs(params.flat(), ts, xs)
    for row, t, x in zip(batch, ts, xs):
        ref = reference_denoise_dist(int(t), BitString.from_index(int(x), width), params, topo, T)
        np.testing.assert_allclose(row, ref, atol=1e-11)


def test_normalized_over_1000_random_draws():
    rng = np.random.default_rng(1)
    topo = make_topology("all-to-all", 3)
    circ = DenoiserCircuit(3, 2, topo, T)
    thetas = rng.normal(scale=3.0, size=(1000, circ.n_params))
    sums = [circ.probs(th, [rng.integers(1, T + 1)], [rng.integers(8)]).sum() for th in thetas]
    np.testing.assert_allclose(sums, 1.0, atol=1e-10)


def test_time_sensitivity():
    rng = np.random.default_rng(2)
    topo = make_topology("all-to-all", 4)
    for _ in range(10):
        params = random_params(rng, 4, 2, topo)
        xt = BitString.from_index(int(rng.integers(16)), 4)
        gap = np.max(np.abs(denoise_dist(1, xt, params, topo, T) - denoise_dist(T, xt, params, topo, T)))
        assert gap > 1e-6


def test_timestep_range_checked():
    topo = make_topology("chain", 2)
    with pytest.raises(ValueError):
        denoise_dist(0, BitString.from_str("00"), DenoiserParams.zeros(2, 1, topo), topo, T)


# -- sampling ---------------------------------------------------------------------------

def test_sampling():
    topo = make_topology("all-to-all", 3)
    xt = BitString.from_str("011")
    zero = DenoiserParams.zeros(3, 1, topo)
    rng = np.random.default_rng(3)
    assert all(sample_denoised(9, xt, zero, topo, T, rng).index == 0 for _ in range(20))

    params = random_params(np.random.default_rng(4), 3, 2, topo)
    a = sample_denoised(9, xt, params, topo, T, np.random.default_rng(5))
    b = sample_denoised(9, xt, params, topo, T, np.random.default_rng(5))
    assert a == b

    p = denoise_dist(9, xt, params, topo, T)
    draws = np.random.default_rng(6).choice(8, size=100000, p=p)
    counts = np.bincount(draws, minlength=8)
    sigma = np.sqrt(1e5 * p * (1 - p))
    assert np.all(np.abs(counts - 1e5 * p) <= 3 * sigma + 1e-9)


def test_sample_denoised_frequencies():
    topo = make_topology("chain", 2)
    params = random_params(np.random.default_rng(7), 2, 2, topo)
    xt = BitString.from_str("10")
    rng = np.random.default_rng(8)
    draws = [sample_denoised(3, xt, params, topo, T, rng).index for _ in range(4000)]
    p = denoise_dist(3, xt, params, topo, T)
    counts = np.bincount(draws, minlength=4)
    sigma = np.sqrt(4000 * p * (1 - p))
    assert np.all(np.abs(counts - 4000 * p) <= 3 * sigma + 1e-9)


# -- gradients ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind,width,layers", [("all-to-all", 3, 2), ("star", 2, 3), ("chain", 4, 1)])
def test_gradient_methods_agree(kind, width, layers):
    rng = np.random.default_rng(9)
    topo = make_topology(kind, width)
    circ = DenoiserCircuit(width, layers, topo, T)
    theta = rng.normal(size=circ.n_params)
    ts, xs = rng.integers(1, T + 1, 5), rng.integers(0, 2**width, 5)
    cot = rng.normal(size=(5, 2**width))
    p_adj, g_adj = circ.vjp(theta, ts, xs, cot)
    p_ps, g_ps = circ.vjp_parameter_shift(theta, ts, xs, cot)
    _, g_fd = circ.vjp_finite_difference(theta, ts, xs, cot, step=1e-4)
    np.testing.assert_allclose(p_adj, p_ps, atol=1e-14)
    np.testing.assert_allclose(g_adj, g_ps, atol=1e-11)
    np.testing.assert_allclose(g_ps, g_fd, atol=1e-6)


def test_callable_cotangent():
    rng = np.random.default_rng(10)
    topo = make_topology("all-to-all", 2)
    circ = DenoiserCircuit(2, 2, topo, T)
    theta = rng.normal(size=circ.n_params)
    target = rng.dirichlet(np.ones(4), size=3)
    ts, xs = [1, 5, 30], [0, 3, 2]
    p, g = circ.vjp(theta, ts, xs, lambda probs: 2 * (probs - target))
    _, g2 = circ.vjp(theta, ts, xs, 2 * (p - target))
    np.testing.assert_array_equal(g, g2)
    with pytest.raises(ValueError):
        circ.vjp(theta, ts, xs, np.zeros((3, 3)))
