"""Detection head: pool pyramid features per box, predict clean boxes and class logits."""

from __future__ import annotations

import math

import numpy as np

from .diffusion import SIGNAL_SCALE, clamp_boxes, from_scaled, to_scaled
from .numerics import (ConfigError, DimensionError, Module, Tensor, add, concat, cross_entropy,
                       linear, make, mul, silu, square, take_rows, tsum, xavier, zeros)

CANONICAL_SCALE = 224.0
CANONICAL_LEVEL = 4


def time_embed(t: int, dim: int) -> np.ndarray:
    """Interleaved (sin, cos) pairs at geometric frequencies 1/10000^(2i/dim)."""
    if dim % 2:
        raise ConfigError(f"time embedding width must be even, got {dim}")
    i = np.arange(dim // 2)
    arg = t / np.power(10000.0, 2.0 * i / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(arg)
    out[1::2] = np.cos(arg)
    return out


def assign_levels(boxes: np.ndarray, image_hw: tuple[int, int], strides,
                  k0: int = CANONICAL_LEVEL, canonical: float = CANONICAL_SCALE) -> np.ndarray:
    """Pyramid stride per box from its pixel scale."""
    H, W = image_hw
    levels = np.log2(np.asarray(strides, dtype=np.float64)).astype(int)
    area = boxes[:, 2] * boxes[:, 3] * H * W
    k = np.floor(k0 + np.log2(np.sqrt(np.maximum(area, 1e-12)) / canonical))
    k = np.clip(k, levels.min(), levels.max()).astype(int)
    return 2 ** k


def sample_points(boxes: np.ndarray, G: int, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates (y, x) of the G x G cell centres of each box, [N, G*G] each."""
    g = (np.arange(G) + 0.5) / G
    x0 = boxes[:, 0] - boxes[:, 2] / 2
    y0 = boxes[:, 1] - boxes[:, 3] / 2
    xs = (x0[:, None] + g[None] * boxes[:, 2:3]) * w - 0.5
    ys = (y0[:, None] + g[None] * boxes[:, 3:4]) * h - 0.5
    Y = np.repeat(ys, G, axis=1)
    X = np.tile(xs, (1, G))
    return np.clip(Y, 0, h - 1), np.clip(X, 0, w - 1)


def bilinear_gather(fmap: Tensor, ys: np.ndarray, xs: np.ndarray) -> Tensor:
    """Bilinear samples of fmap[C,h,w] at flat points -> [P, C]; gradient flows to fmap only."""
    C, h, w = fmap.shape
    ys = ys.reshape(-1)
    xs = xs.reshape(-1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    corners = [(y0, x0, (1 - fy) * (1 - fx)), (y0, x1, (1 - fy) * fx),
               (y1, x0, fy * (1 - fx)), (y1, x1, fy * fx)]
    flat = fmap.data.reshape(C, h * w)
    out = np.zeros((ys.size, C))
    for yy, xx, wt in corners:
        out += flat[:, yy * w + xx].T * wt[:, None]

    def back(g):
        gflat = np.zeros((C, h * w))
        for yy, xx, wt in corners:
            np.add.at(gflat.T, yy * w + xx, g * wt[:, None])
        return (gflat.reshape(C, h, w),)

    return make(out, (fmap,), back)


def roi_pool_batch(fp: dict[int, Tensor], boxes: np.ndarray, G: int,
                   image_hw: tuple[int, int] | None = None) -> Tensor:
    """[N, G*G*C] pooled features for normalised boxes, flattened as (gy, gx, c)."""
    if not fp:
        raise ConfigError("empty feature pyramid")
    strides = sorted(fp)
    if image_hw is None:
        s0 = strides[0]
        image_hw = (fp[s0].shape[1] * s0, fp[s0].shape[2] * s0)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    N = len(boxes)
    lvl = assign_levels(boxes, image_hw, strides)
    parts, order = [], []
    for s in strides:
        idx = np.nonzero(lvl == s)[0]
        if idx.size == 0:
            continue
        fmap = fp[s]
        C, h, w = fmap.shape
        ys, xs = sample_points(boxes[idx], G, h, w)
        parts.append(bilinear_gather(fmap, ys, xs).reshape(idx.size, G * G * C))
        order.append(idx)
    pooled = concat(parts, axis=0) if len(parts) > 1 else parts[0]
    order = np.concatenate(order)
    inv = np.empty(N, dtype=np.intp)
    inv[order] = np.arange(N)
    return take_rows(pooled, inv)


def roi_pool(fp: dict[int, Tensor], box, G: int, image_hw=None) -> Tensor:
    """Pooled G x G x C grid for one box."""
    out = roi_pool_batch(fp, np.asarray(box, dtype=np.float64)[None], G, image_hw)
    C = fp[sorted(fp)[0]].shape[0]
    return out.reshape(G, G, C)


class DetectHead(Module):
    """Shared MLP over (pooled box features, time embedding, box position).

    The box branch sees the hidden state and the proposal's own position, so an
    identity initialisation of the position block makes the untrained head
    predict the proposal itself.
    """

    def __init__(self, feat_channels: int, num_classes: int, grid: int = 3, time_dim: int = 32,
                 hidden: int = 256, rng: np.random.Generator | None = None,
                 scale: float = SIGNAL_SCALE, min_size: float = 1e-3, context: float = 0.0):
        if grid < 1 or num_classes < 1:
            raise ConfigError("grid and class count must be >= 1")
        if time_dim % 2:
            raise ConfigError("time_dim must be even")
        rng = rng or np.random.default_rng(0)
        self.grid, self.time_dim, self.num_classes = grid, time_dim, num_classes
        self.scale, self.min_size, self.context = scale, min_size, context
        n_pool = 2 if context > 0 else 1
        d_in = n_pool * grid * grid * feat_channels + time_dim + 4
        self.W1 = xavier(rng, (d_in, hidden), d_in, hidden)
        self.b1 = zeros(hidden)
        self.W2 = xavier(rng, (hidden, hidden), hidden, hidden)
        self.b2 = zeros(hidden)
        self.W_box = xavier(rng, (hidden, 4), hidden, 4)
        self.W_pos = zeros((4, 4))
        self.W_pos.data[...] = np.eye(4)
        self.b_box = zeros(4)
        self.W_cls = xavier(rng, (hidden, num_classes + 1), hidden, num_classes + 1)
        self.b_cls = zeros(num_classes + 1)

    def proposal_boxes(self, z_t: np.ndarray) -> np.ndarray:
        return clamp_boxes(from_scaled(z_t, self.scale), self.min_size)

    def __call__(self, fp: dict[int, Tensor], z_t: np.ndarray, t: int,
                 image_hw=None) -> tuple[Tensor, Tensor]:
        z_t = np.asarray(z_t, dtype=np.float64).reshape(-1, 4)
        N = len(z_t)
        boxes = self.proposal_boxes(z_t)
        pos = Tensor(to_scaled(boxes, self.scale))
        pooled = roi_pool_batch(fp, boxes, self.grid, image_hw)
        if self.context > 0:
            wide = clamp_boxes(np.concatenate([boxes[:, :2], boxes[:, 2:] * self.context], 1),
                               self.min_size)
            pooled = concat([pooled, roi_pool_batch(fp, wide, self.grid, image_hw)], axis=1)
        temb = Tensor(np.broadcast_to(time_embed(t, self.time_dim), (N, self.time_dim)))
        x = concat([pooled, temb, pos], axis=1)
        h = silu(linear(silu(linear(x, self.W1, self.b1)), self.W2, self.b2))
        z0_hat = add(add(linear(h, self.W_box), linear(pos, self.W_pos)), self.b_box)
        logits = linear(h, self.W_cls, self.b_cls)
        return z0_hat, logits


def head_forward(fp, z_t, t: int, head: DetectHead, image_hw=None):
    return head(fp, z_t, t, image_hw)


def loss_terms(z0_hat: Tensor, logits: Tensor, z0_true: np.ndarray, labels: np.ndarray,
               origin_mask: np.ndarray) -> tuple[Tensor, Tensor]:
    """(box term, class term): half mean squared error over GT rows; mean CE over all rows."""
    z0_true = np.asarray(z0_true, dtype=np.float64)
    if z0_hat.shape != z0_true.shape:
        raise DimensionError(f"prediction {z0_hat.shape} vs target {z0_true.shape}")
    mask = np.asarray(origin_mask, dtype=bool)
    n_gt = int(mask.sum())
    if n_gt:
        rows = np.nonzero(mask)[0]
        diff = add(take_rows(z0_hat, rows), Tensor(-z0_true[rows]))
        box = mul(tsum(square(diff)), 0.5 / n_gt)
    else:
        box = mul(tsum(z0_hat), 0.0)
    return box, cross_entropy(logits, labels)


def train_loss(z0_hat: Tensor, logits: Tensor, z0_true: np.ndarray, labels: np.ndarray,
               origin_mask: np.ndarray, cls_weight: float = 1.0) -> Tensor:
    box, cls = loss_terms(z0_hat, logits, z0_true, labels, origin_mask)
    return add(box, mul(cls, cls_weight))
