"""Multi-head softmax attention and agent attention."""

from __future__ import annotations

import numpy as np

from .numerics import (ConfigError, DimensionError, Module, Tensor, as_tensor, linear, matmul, mul,
                       reshape, softmax_rows, transpose, xavier, zeros)

DEFAULT_HEADS = 4
DEFAULT_AGENTS = 16


def _split_heads(x: Tensor, heads: int) -> Tensor:
    N, C = x.shape
    if C % heads:
        raise ConfigError(f"{C} channels not divisible by {heads} heads")
    return transpose(reshape(x, (N, heads, C // heads)), (1, 0, 2))


def _merge_heads(x: Tensor) -> Tensor:
    h, N, d = x.shape
    return reshape(transpose(x, (1, 0, 2)), (N, h * d))


def softmax_attention(Q: Tensor, K: Tensor, V: Tensor, heads: int = 1) -> Tensor:
    """softmax(Q K^T / sqrt(d)) V per head, with d the per-head key width."""
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise DimensionError("attention operands must be 2-D token matrices")
    if Q.shape[1] != K.shape[1]:
        raise DimensionError(f"query width {Q.shape} != key width {K.shape}")
    if K.shape[0] != V.shape[0]:
        raise DimensionError(f"{K.shape[0]} keys but {V.shape[0]} values")
    q, k, v = (_split_heads(t, heads) for t in (Q, K, V))
    scale = 1.0 / np.sqrt(q.shape[-1])
    weights = softmax_rows(mul(matmul(q, transpose(k, (0, 2, 1))), scale))
    return _merge_heads(matmul(weights, v))


def segment_pool_matrix(N: int, n: int) -> np.ndarray:
    """[n, N] averaging matrix over n contiguous near-equal segments.

    The first ``N % n`` segments take one extra token.
    """
    if not 1 <= n <= N:
        raise ConfigError(f"agent count {n} must lie in [1, {N}]")
    base, extra = divmod(N, n)
    P = np.zeros((n, N))
    start = 0
    for i in range(n):
        size = base + (1 if i < extra else 0)
        P[i, start:start + size] = 1.0 / size
        start += size
    return P


def agent_pool(Q: Tensor, n: int) -> Tensor:
    """Agent tokens as contiguous-segment means of the query tokens."""
    Q = as_tensor(Q)
    return matmul(Tensor(segment_pool_matrix(Q.shape[0], n)), Q)


def agent_attention(Q: Tensor, K: Tensor, V: Tensor, A: Tensor, heads: int = 1) -> Tensor:
    """Agents gather from (K, V), then queries read from the agents."""
    A = as_tensor(A)
    if A.shape[0] < 1:
        raise ConfigError("need at least one agent token")
    V_A = softmax_attention(A, K, V, heads)
    return softmax_attention(Q, A, V_A, heads)


class AgentAttentionBlock(Module):
    def __init__(self, channels: int, heads: int = DEFAULT_HEADS, agents: int = DEFAULT_AGENTS,
                 rng: np.random.Generator | None = None):
        if channels % heads:
            raise ConfigError(f"{channels} channels not divisible by {heads} heads")
        rng = rng or np.random.default_rng(0)
        self.heads = heads
        self.agents = agents
        for name in ("W_q", "W_k", "W_v", "W_o"):
            setattr(self, name, xavier(rng, (channels, channels), channels, channels))
        self.b_o = zeros(channels)

    def __call__(self, x: Tensor) -> Tensor:
        Q = linear(x, self.W_q)
        K = linear(x, self.W_k)
        V = linear(x, self.W_v)
        A = agent_pool(Q, min(self.agents, x.shape[0]))
        return linear(agent_attention(Q, K, V, A, self.heads), self.W_o, self.b_o)

    def output_params(self):
        return [self.W_o, self.b_o]
