import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisebox.attention import (AgentAttentionBlock, agent_attention, agent_pool,
                                segment_pool_matrix, softmax_attention)
from noisebox.numerics import ConfigError, DimensionError, Tensor


def R(seed, *shape):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


def test_single_key_returns_its_value():
    V = np.array([[1.5, -2.0, 0.25]])
    out = softmax_attention(R(0, 5, 4), R(1, 1, 4), Tensor(V)).data
    np.testing.assert_allclose(out, np.repeat(V, 5, axis=0), rtol=1e-15)


def test_equal_values_are_preserved():
    v = np.array([0.3, -1.0, 2.0, 4.0])
    V = Tensor(np.tile(v, (7, 1)))
    np.testing.assert_allclose(softmax_attention(R(0, 3, 4), R(1, 7, 4), V, heads=2).data,
                               np.tile(v, (3, 1)), rtol=1e-13)
    np.testing.assert_allclose(agent_attention(R(0, 3, 4), R(1, 7, 4), V, R(2, 2, 4), 2).data,
                               np.tile(v, (3, 1)), rtol=1e-13)


def test_two_token_hand_case():
    s = 3.0
    Q = K = Tensor(s * np.eye(2))
    V = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    out = softmax_attention(Q, K, V).data
    e = np.exp(s * s / np.sqrt(2))
    w_same, w_other = e / (e + 1.0), 1.0 / (e + 1.0)
    np.testing.assert_allclose(out, [[w_same, w_other], [w_other, w_same]], rtol=1e-14)


def test_shape_errors():
    with pytest.raises(DimensionError):
        softmax_attention(R(0, 3, 4), R(0, 3, 5), R(0, 3, 4))
    with pytest.raises(DimensionError):
        softmax_attention(R(0, 3, 4), R(0, 3, 4), R(0, 2, 4))
    with pytest.raises(ConfigError):
        softmax_attention(R(0, 3, 6), R(0, 3, 6), R(0, 3, 6), heads=4)


def test_agent_pool_examples():
    Q = np.arange(12.0).reshape(4, 3)
    np.testing.assert_array_equal(agent_pool(Tensor(Q), 4).data, Q)
    np.testing.assert_allclose(agent_pool(Tensor(Q), 1).data, Q.mean(axis=0, keepdims=True))
    np.testing.assert_allclose(agent_pool(Tensor(Q), 2).data,
                               [(Q[0] + Q[1]) / 2, (Q[2] + Q[3]) / 2])


def test_agent_pool_remainder_goes_to_leading_segments():
    P = segment_pool_matrix(7, 3)
    assert [(row > 0).sum() for row in P] == [3, 2, 2]
    np.testing.assert_allclose(P.sum(axis=1), 1.0)


def test_agent_pool_bounds():
    with pytest.raises(ConfigError):
        agent_pool(R(0, 3, 2), 4)
    with pytest.raises(ConfigError):
        agent_pool(R(0, 3, 2), 0)


def test_one_agent_broadcasts_aggregate():
    Q, K, V = R(0, 6, 4), R(1, 5, 4), R(2, 5, 4)
    A = agent_pool(Q, 1)
    V_A = softmax_attention(A, K, V).data
    out = agent_attention(Q, K, V, A).data
    np.testing.assert_allclose(out, np.repeat(V_A, 6, axis=0), rtol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_query_permutation_equivariance(N, seed):
    rng = np.random.default_rng(seed)
    Q, K, V, A = (rng.standard_normal(s) for s in ((N, 4), (7, 4), (7, 4), (3, 4)))
    perm = rng.permutation(N)
    out = agent_attention(Tensor(Q), Tensor(K), Tensor(V), Tensor(A), 2).data
    out_p = agent_attention(Tensor(Q[perm]), Tensor(K), Tensor(V), Tensor(A), 2).data
    np.testing.assert_array_equal(out_p, out[perm])
    s = softmax_attention(Tensor(Q), Tensor(K), Tensor(V), 2).data
    s_p = softmax_attention(Tensor(Q[perm]), Tensor(K), Tensor(V), 2).data
    np.testing.assert_array_equal(s_p, s[perm])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 10_000))
def test_outputs_in_convex_hull_of_values(Nq, Nk, seed):
    """Feeding V = I exposes the mixing weights: nonnegative, rows summing to 1."""
    rng = np.random.default_rng(seed)
    Q, K = rng.standard_normal((Nq, 3)) * 3, rng.standard_normal((Nk, 3)) * 3
    V = rng.standard_normal((Nk, 5))
    A = rng.standard_normal((min(Nk, 3), 3))
    for attn in (lambda v: softmax_attention(Tensor(Q), Tensor(K), Tensor(v)),
                 lambda v: agent_attention(Tensor(Q), Tensor(K), Tensor(v), Tensor(A))):
        W = attn(np.eye(Nk)).data
        assert np.all(W >= 0)
        np.testing.assert_allclose(W.sum(axis=1), 1.0, rtol=1e-12)
        np.testing.assert_allclose(attn(V).data, W @ V, rtol=1e-10, atol=1e-12)


def test_block_clamps_agents_to_token_count():
    blk = AgentAttentionBlock(8, heads=2, agents=16, rng=np.random.default_rng(0))
    assert blk(R(0, 5, 8)).shape == (5, 8)
