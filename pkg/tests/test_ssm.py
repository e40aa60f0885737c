import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisebox import _kernels
from noisebox._kernels import scan_py
from noisebox.numerics import DimensionError, Tensor, grad_check, tsum, mul
from noisebox.ssm import (DIRECTIONS, SARScan, ScanDirection, SSMParams, direction_order,
                          grid_to_tokens, inverse_order, s6_scan_parallel, s6_scan_seq,
                          scan_expand4, scan_merge4, selective_params, tokens_to_grid)


def naive_s6(u, p):
    """Literal recurrence, one channel and one token at a time."""
    u = np.asarray(u)
    W_d, b_d, W_B, W_C = p.W_delta.data, p.b_delta.data, p.W_B.data, p.W_C.data
    A = -np.exp(p.A_log.data)
    L, C = u.shape
    h = np.zeros((C, A.shape[1]))
    y = np.zeros((L, C))
    for t in range(L):
        delta = np.logaddexp(0.0, u[t] @ W_d + b_d)
        B, Ct = u[t] @ W_B, u[t] @ W_C
        for c in range(C):
            h[c] = np.exp(delta[c] * A[c]) * h[c] + delta[c] * B * u[t, c]
            y[t, c] = Ct @ h[c] + p.D.data[c] * u[t, c]
    return y


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-30)


# kernels --------------------------------------------------------------------

@pytest.mark.parametrize("backend", _kernels.available_backends())
@pytest.mark.parametrize("L,chunk", [(1, 1), (5, 2), (64, 8), (100, 7), (33, 64)])
def test_chunked_kernel_matches_sequential(backend, L, chunk):
    rng = np.random.default_rng(L)
    a = rng.uniform(0.2, 1.0, (L, 6))
    x = rng.standard_normal((L, 6))
    k = _kernels.get_backend(backend)
    ref = scan_py.scan_seq(a, x)
    np.testing.assert_allclose(k.scan_seq(a, x), ref, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(k.scan_chunked(a, x, chunk), ref, rtol=1e-10, atol=1e-12)


def test_backends_agree():
    if "compiled" not in _kernels.available_backends():
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(3)
    a, x = rng.uniform(0.5, 1, (300, 4)), rng.standard_normal((300, 4))
    c, p = _kernels.get_backend("compiled"), _kernels.get_backend("python")
    np.testing.assert_allclose(c.scan_chunked(a, x, 16), p.scan_chunked(a, x, 16), rtol=1e-12)


def test_use_backend_switches_and_restores():
    before = _kernels.get_backend()
    with _kernels.use_backend("python"):
        assert _kernels.get_backend() is scan_py
    assert _kernels.get_backend() is before
    with pytest.raises(ValueError):
        _kernels.get_backend("gpu")


elem = st.tuples(st.floats(-2, 2), st.floats(-5, 5))


@settings(max_examples=100, deadline=None)
@given(elem, elem, elem)
def test_combine_associative(e1, e2, e3):
    c = scan_py.combine
    pack = [tuple(np.array([v]) for v in e) for e in (e1, e2, e3)]
    left = c(c(pack[0], pack[1]), pack[2])
    right = c(pack[0], c(pack[1], pack[2]))
    np.testing.assert_allclose(left, right, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 3))
def test_blelloch_exclusive_scan(n, m):
    rng = np.random.default_rng(n * 7 + m)
    A, B = rng.uniform(0.1, 1.0, (n, m)), rng.standard_normal((n, m))
    EA, EB = scan_py.blelloch_exclusive(A, B)
    accA, accB = np.ones(m), np.zeros(m)
    for i in range(n):
        np.testing.assert_allclose(EA[i], accA, rtol=1e-12)
        np.testing.assert_allclose(EB[i], accB, rtol=1e-12, atol=1e-12)
        accA, accB = scan_py.combine((accA, accB), (A[i], B[i]))


# S6 -------------------------------------------------------------------------

def test_selective_params_examples():
    p = SSMParams(3, 2, np.random.default_rng(0))
    p.b_delta.data[...] = 0.0
    p.W_B.data[...] = 0.0
    delta, B, _ = selective_params(Tensor(np.zeros((4, 3))), p)
    np.testing.assert_allclose(delta.data, np.log(2.0), rtol=1e-15)
    assert not B.data.any()
    u = Tensor(np.random.default_rng(1).standard_normal((50, 3)) * 30)
    assert np.all(selective_params(u, p)[0].data > 0)


def test_a_strictly_negative():
    p = SSMParams(4, 5, np.random.default_rng(0))
    assert np.all(p.A().data < 0)


@pytest.mark.parametrize("L", [1, 2, 9])
def test_seq_matches_naive_recurrence(L):
    rng = np.random.default_rng(L)
    p = SSMParams(3, 4, rng)
    u = rng.standard_normal((L, 3))
    np.testing.assert_allclose(s6_scan_seq(Tensor(u), p).data, naive_s6(u, p), rtol=1e-12,
                               atol=1e-14)


def test_hand_unroll_two_steps():
    p = SSMParams(1, 1, np.random.default_rng(0))
    p.A_log.data[...] = 0.0       # A = -1
    p.W_delta.data[...] = 0.0
    p.b_delta.data[...] = 0.0     # delta = ln 2
    p.W_B.data[...] = 1.0
    p.W_C.data[...] = 1.0
    p.D.data[...] = 0.5
    u = np.array([[1.0], [2.0]])
    d = np.log(2.0)
    h1 = d * 1.0 * 1.0                          # B_1 = u_1 = 1
    y1 = 1.0 * h1 + 0.5 * 1.0
    h2 = np.exp(-d) * h1 + d * 2.0 * 2.0        # B_2 = u_2 = 2
    y2 = 2.0 * h2 + 0.5 * 2.0
    out = s6_scan_seq(Tensor(u), p).data[:, 0]
    np.testing.assert_allclose(out, [y1, y2], rtol=1e-14)


def test_memoryless_limit():
    rng = np.random.default_rng(0)
    p = SSMParams(2, 3, rng)
    p.A_log.data[...] = 10.0
    p.b_delta.data[...] = 5.0   # delta large enough that exp(delta*A) underflows to 0
    u = rng.standard_normal((6, 2))
    delta, B, Ct = (t.data for t in selective_params(Tensor(u), p))
    expected = (Ct * B).sum(axis=1)[:, None] * delta * u + p.D.data * u
    np.testing.assert_allclose(s6_scan_seq(Tensor(u), p).data, expected, rtol=1e-12)


def test_zero_input_zero_output():
    p = SSMParams(3, 4, np.random.default_rng(0))
    assert not s6_scan_parallel(Tensor(np.zeros((20, 3))), p, 4).data.any()


@pytest.mark.parametrize("L", [1, 2, 7, 64, 1024])
@pytest.mark.parametrize("C", [1, 8])
@pytest.mark.parametrize("S", [1, 4, 16])
def test_parallel_equals_sequential_grid(L, C, S):
    rng = np.random.default_rng([L, C, S])
    p = SSMParams(C, S, rng)
    u = Tensor(rng.standard_normal((L, C)))
    assert rel_err(s6_scan_parallel(u, p, 64).data, s6_scan_seq(u, p).data) <= 1e-5


@pytest.mark.parametrize("backend", _kernels.available_backends())
def test_chunk_equal_length_is_bit_identical(backend):
    rng = np.random.default_rng(5)
    p = SSMParams(4, 8, rng)
    u = Tensor(rng.standard_normal((37, 4)))
    with _kernels.use_backend(backend):
        assert np.array_equal(s6_scan_parallel(u, p, 37).data, s6_scan_seq(u, p).data)


def test_long_sequence_stable():
    rng = np.random.default_rng(9)
    p = SSMParams(8, 16, rng)
    y = s6_scan_parallel(Tensor(rng.standard_normal((4096, 8)) * 3), p, 64).data
    assert np.all(np.isfinite(y))
    assert np.max(np.abs(y)) < 1e6


def test_s6_gradients():
    rng = np.random.default_rng(2)
    p = SSMParams(2, 3, rng)
    u = Tensor(rng.standard_normal((9, 2)), requires_grad=True)
    R = Tensor(rng.standard_normal((9, 2)))
    rep = grad_check(lambda: tsum(mul(s6_scan_parallel(u, p, 4), R)),
                     [("u", u)] + list(p.named_parameters()))
    assert rep.ok, str(rep)


# four-direction expand / merge ----------------------------------------------

def test_expand_example():
    x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    lr, td, bu, rl = (s.data[:, 0].tolist() for s in scan_expand4(x))
    assert lr == [1, 2, 3, 4]
    assert td == [1, 3, 2, 4]
    assert rl == [4, 3, 2, 1]
    assert bu == [4, 2, 3, 1]


def test_single_cell_all_directions_equal():
    seqs = scan_expand4(Tensor(np.array([[[7.0]], [[-1.0]]])))
    for s in seqs[1:]:
        np.testing.assert_array_equal(s.data, seqs[0].data)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7))
def test_direction_maps_are_bijections(H, W):
    x = np.random.default_rng(H * 10 + W).standard_normal((2, H, W))
    for d in ScanDirection:
        order = direction_order(d, H, W)
        assert sorted(order.tolist()) == list(range(H * W))
        tokens = grid_to_tokens(Tensor(x)).data[order]
        back = tokens[inverse_order(order)]
        np.testing.assert_array_equal(tokens_to_grid(Tensor(back), H, W).data, x)


def brute_merge(seqs, H, W):
    """Place every element at its grid cell, then add."""
    C = seqs[0].shape[1]
    out = np.zeros((C, H, W))
    for d, s in zip(DIRECTIONS, seqs):
        for k, cell in enumerate(direction_order(d, H, W)):
            out[:, cell // W, cell % W] += s[k]
    return out


def test_merge_matches_brute_force():
    rng = np.random.default_rng(4)
    H, W = 3, 5
    seqs = [rng.standard_normal((H * W, 2)) for _ in range(4)]
    got = scan_merge4(*(Tensor(s) for s in seqs), H, W).data
    np.testing.assert_allclose(got, brute_merge(seqs, H, W), rtol=1e-14)


def test_merge_zero_and_single_branch():
    H, W = 2, 3
    z = Tensor(np.zeros((6, 2)))
    assert not scan_merge4(z, z, z, z, H, W).data.any()
    y = np.random.default_rng(0).standard_normal((6, 2))
    got = scan_merge4(z, Tensor(y), z, z, H, W).data
    np.testing.assert_array_equal(got, brute_merge([np.zeros((6, 2)), y, np.zeros((6, 2)),
                                                    np.zeros((6, 2))], H, W))


def test_merge_length_mismatch():
    with pytest.raises(DimensionError):
        scan_merge4(Tensor(np.zeros((6, 1))), Tensor(np.zeros((5, 1))), Tensor(np.zeros((6, 1))),
                    Tensor(np.zeros((6, 1))), 2, 3)


def test_expand_merge_identity_roundtrip():
    x = np.random.default_rng(1).standard_normal((3, 4, 5))
    got = scan_merge4(*scan_expand4(Tensor(x)), 4, 5).data
    np.testing.assert_allclose(got, 4 * x, rtol=1e-15)


# equivariance of the tied four-direction operator ---------------------------

def _tied(C=3, S=4, seed=0):
    return SARScan(C, S, tied=True, rng=np.random.default_rng(seed), chunk=64)


def test_rotation_180_equivariance():
    sc = _tied()
    for i in range(10):
        x = np.random.default_rng(i).standard_normal((3, 16, 16))
        y = sc.forward_grid(Tensor(x)).data
        y_rot = sc.forward_grid(Tensor(x[:, ::-1, ::-1].copy())).data
        assert np.max(np.abs(y_rot - y[:, ::-1, ::-1])) <= 1e-10


def test_transpose_equivariance():
    sc = _tied()
    x = np.random.default_rng(0).standard_normal((3, 16, 16))
    y = sc.forward_grid(Tensor(x)).data
    y_t = sc.forward_grid(Tensor(x.transpose(0, 2, 1).copy())).data
    assert np.max(np.abs(y_t - y.transpose(0, 2, 1))) <= 1e-10


def test_single_axis_flip_is_not_a_symmetry():
    # Row-major order of a mirrored grid is not reversed row-major order, so a
    # one-axis flip does not exchange LR and RL; only the two-axis flip does.
    sc = _tied()
    x = np.random.default_rng(0).standard_normal((3, 16, 16))
    y = sc.forward_grid(Tensor(x)).data
    y_f = sc.forward_grid(Tensor(x[:, :, ::-1].copy())).data
    assert np.max(np.abs(y_f - y[:, :, ::-1])) > 1e-6


def test_untied_branches_are_independent():
    sc = SARScan(2, 2, rng=np.random.default_rng(0))
    ids = {id(p) for p in sc.branch_params()}
    assert len(ids) == 4
    assert len(_tied().parameters()) == len(SSMParams(3, 4).parameters())
