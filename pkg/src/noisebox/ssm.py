"""Selective state-space scan and the four-direction expand/merge over 2-D grids."""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import _kernels
from .numerics import (DimensionError, Module, Param, Tensor, as_tensor, exp, linear, make, neg,
                       softplus, take_rows, transpose, reshape, xavier)
from .numerics.tensor import add

DEFAULT_STATE = 16
DEFAULT_CHUNK = 64


class ScanDirection(Enum):
    LeftToRight = "lr"
    TopDown = "td"
    BottomUp = "bu"
    RightToLeft = "rl"


# merge argument order
DIRECTIONS = (ScanDirection.LeftToRight, ScanDirection.TopDown,
              ScanDirection.BottomUp, ScanDirection.RightToLeft)


def direction_order(direction: ScanDirection, H: int, W: int) -> np.ndarray:
    """Row-major grid index visited at each sequence position."""
    row_major = np.arange(H * W)
    col_major = np.arange(H * W).reshape(H, W).T.reshape(-1)
    return {
        ScanDirection.LeftToRight: row_major,
        ScanDirection.TopDown: col_major,
        ScanDirection.RightToLeft: row_major[::-1].copy(),
        ScanDirection.BottomUp: col_major[::-1].copy(),
    }[direction]


def inverse_order(order: np.ndarray) -> np.ndarray:
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return inv


def grid_to_tokens(x: Tensor) -> Tensor:
    """[C,H,W] -> [H*W, C] in row-major order."""
    C, H, W = x.shape
    return transpose(reshape(x, (C, H * W)), (1, 0))


def tokens_to_grid(seq: Tensor, H: int, W: int) -> Tensor:
    L, C = seq.shape
    if L != H * W:
        raise DimensionError(f"{L} tokens cannot form a {H}x{W} grid")
    return reshape(transpose(seq, (1, 0)), (C, H, W))


def scan_expand4(x: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Unfold [C,H,W] into the (LR, TD, BU, RL) sequences, each [H*W, C]."""
    x = as_tensor(x)
    _, H, W = x.shape
    tokens = grid_to_tokens(x)
    return tuple(take_rows(tokens, direction_order(d, H, W)) for d in DIRECTIONS)


def scan_merge4(y_lr: Tensor, y_td: Tensor, y_bu: Tensor, y_rl: Tensor, H: int, W: int) -> Tensor:
    """Place each sequence back on the grid through its inverse order and sum."""
    ys = [as_tensor(y) for y in (y_lr, y_td, y_bu, y_rl)]
    for y in ys:
        if y.shape[0] != H * W or y.shape != ys[0].shape:
            raise DimensionError(f"merge expects four [{H * W}, C] sequences, got "
                                 f"{[t.shape for t in ys]}")
    total = None
    for d, y in zip(DIRECTIONS, ys):
        placed = take_rows(y, inverse_order(direction_order(d, H, W)))
        total = placed if total is None else add(total, placed)
    return tokens_to_grid(total, H, W)


class SSMParams(Module):
    """Per-channel diagonal SSM with input-dependent step, B and C."""

    def __init__(self, channels: int, state: int = DEFAULT_STATE,
                 rng: np.random.Generator | None = None,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        if state < 1:
            raise ValueError("state size must be >= 1")
        rng = rng or np.random.default_rng(0)
        self.A_log = Param(np.log(np.tile(np.arange(1, state + 1, dtype=float), (channels, 1))))
        self.D = Param(np.ones(channels))
        self.W_delta = xavier(rng, (channels, channels), channels, channels)
        # step bias so that softplus(b) is log-uniform in [dt_min, dt_max]
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=channels))
        self.b_delta = Param(dt + np.log(-np.expm1(-dt)))
        self.W_B = xavier(rng, (channels, state), channels, state)
        self.W_C = xavier(rng, (channels, state), channels, state)

    @property
    def channels(self) -> int:
        return self.D.shape[0]

    @property
    def state(self) -> int:
        return self.A_log.shape[1]

    def A(self) -> Tensor:
        return neg(exp(self.A_log))


def selective_params(u: Tensor, p: SSMParams) -> tuple[Tensor, Tensor, Tensor]:
    """Step size, input matrix and output matrix for every token."""
    delta = softplus(linear(u, p.W_delta, p.b_delta))
    return delta, linear(u, p.W_B), linear(u, p.W_C)


def _run_scan(a: np.ndarray, x: np.ndarray, chunk: int | None) -> np.ndarray:
    L = a.shape[0]
    a2 = np.ascontiguousarray(a.reshape(L, -1))
    x2 = np.ascontiguousarray(x.reshape(L, -1))
    if chunk is None:
        h = _kernels.scan_seq(a2, x2)
    else:
        h = _kernels.scan_chunked(a2, x2, int(chunk))
    return np.asarray(h).reshape(x.shape)


def selective_scan(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, Ct: Tensor, D: Tensor,
                   chunk: int | None = None) -> Tensor:
    """Fused discretise + scan + readout.

    Abar = exp(delta A), Bbar u = delta B u, h_t = Abar_t h_{t-1} + Bbar_t u_t,
    y_t = <C_t, h_t> + D u_t. ``chunk=None`` runs the sequential kernel.
    """
    ud, dd, Ad, Bd, Cd, Dd = (t.data for t in (u, delta, A, B, Ct, D))
    L, C = ud.shape
    dA = np.exp(dd[:, :, None] * Ad[None])
    dBu = (dd * ud)[:, :, None] * Bd[:, None, :]
    h = _run_scan(dA, dBu, chunk)
    y = np.einsum("lcs,ls->lc", h, Cd) + Dd * ud

    def back(g):
        gC = np.einsum("lc,lcs->ls", g, h)
        gD = (g * ud).sum(axis=0)
        gh_out = g[:, :, None] * Cd[:, None, :]
        a_next = np.zeros_like(dA)
        a_next[:-1] = dA[1:]
        gh = _run_scan(a_next[::-1], gh_out[::-1], chunk)[::-1]
        h_prev = np.zeros_like(h)
        h_prev[1:] = h[:-1]
        gdA = gh * h_prev * dA
        gdelta = (gdA * Ad[None]).sum(axis=2) + (gh * Bd[:, None, :]).sum(axis=2) * ud
        gA = (gdA * dd[:, :, None]).sum(axis=0)
        gB = np.einsum("lcs,lc->ls", gh, dd * ud)
        gu = g * Dd + (gh * Bd[:, None, :]).sum(axis=2) * dd
        return gu, gdelta, gA, gB, gC, gD

    return make(y, (u, delta, A, B, Ct, D), back)


def s6_scan_seq(u: Tensor, p: SSMParams) -> Tensor:
    """Reference S6: one state update per token, in order."""
    u = as_tensor(u)
    delta, B, Ct = selective_params(u, p)
    return selective_scan(u, delta, p.A(), B, Ct, p.D, chunk=None)


def s6_scan_parallel(u: Tensor, p: SSMParams, chunk: int = DEFAULT_CHUNK) -> Tensor:
    """S6 through chunked prefix scan over (Abar_t, Bbar_t u_t) pairs."""
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    u = as_tensor(u)
    delta, B, Ct = selective_params(u, p)
    return selective_scan(u, delta, p.A(), B, Ct, p.D, chunk=chunk)


class SARScan(Module):
    """Expand a token grid along four directions, run one S6 per direction, merge by sum.

    ``tied=True`` shares a single SSMParams across the four branches.
    """

    def __init__(self, channels: int, state: int = DEFAULT_STATE, tied: bool = False,
                 rng: np.random.Generator | None = None, chunk: int | None = DEFAULT_CHUNK):
        rng = rng or np.random.default_rng(0)
        self.tied = tied
        self.chunk = chunk
        if tied:
            self.shared = SSMParams(channels, state, rng)
            self.branches = []
        else:
            self.branches = [SSMParams(channels, state, rng) for _ in DIRECTIONS]

    def branch_params(self) -> list[SSMParams]:
        return [self.shared] * 4 if self.tied else list(self.branches)

    def _s6(self, u: Tensor, p: SSMParams) -> Tensor:
        if self.chunk is None:
            return s6_scan_seq(u, p)
        return s6_scan_parallel(u, p, self.chunk)

    def forward_grid(self, x: Tensor) -> Tensor:
        _, H, W = x.shape
        seqs = scan_expand4(x)
        outs = [self._s6(s, p) for s, p in zip(seqs, self.branch_params())]
        return scan_merge4(*outs, H, W)

    def forward_tokens(self, tokens: Tensor, H: int, W: int) -> Tensor:
        """Same as ``forward_grid`` for row-major tokens [H*W, C]; returns tokens."""
        if tokens.shape[0] != H * W:
            raise DimensionError(f"{tokens.shape[0]} tokens for a {H}x{W} grid")
        total = None
        for d, p in zip(DIRECTIONS, self.branch_params()):
            order = direction_order(d, H, W)
            y = self._s6(take_rows(tokens, order), p)
            placed = take_rows(y, inverse_order(order))
            total = placed if total is None else add(total, placed)
        return total
