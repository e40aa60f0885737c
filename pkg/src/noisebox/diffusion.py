"""Box diffusion: cosine schedule, forward corruption, DDIM reverse steps, renewal, NMS."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .evalkit import corners_to_cxcywh, cxcywh_to_corners, iou_matrix, score_order
from .numerics import ConfigError

log = logging.getLogger(__name__)

SIGNAL_SCALE = 2.0
MIN_ALPHA = 1e-3


@dataclass
class DiffusionSchedule:
    T: int
    alpha_bar: np.ndarray  # [T+1], alpha_bar[0] == 1
    alpha: np.ndarray      # [T+1], alpha[0] == 1 by convention
    signal_scale: float = SIGNAL_SCALE


@dataclass
class BoxSet:
    """Boxes as normalised (cx, cy, w, h) with per-box labels and scores."""

    boxes: np.ndarray
    labels: np.ndarray = None
    scores: np.ndarray = None

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        n = len(self.boxes)
        self.labels = (np.zeros(n, dtype=np.int64) if self.labels is None
                       else np.asarray(self.labels, dtype=np.int64).reshape(n))
        self.scores = (np.ones(n) if self.scores is None
                       else np.asarray(self.scores, dtype=np.float64).reshape(n))

    def __len__(self) -> int:
        return len(self.boxes)

    def subset(self, idx) -> BoxSet:
        idx = np.asarray(idx, dtype=np.intp)
        return BoxSet(self.boxes[idx], self.labels[idx], self.scores[idx])


def build_schedule(T: int = 1000, s: float = 0.008, signal_scale: float = SIGNAL_SCALE,
                   min_alpha: float = MIN_ALPHA) -> DiffusionSchedule:
    """Cosine schedule alpha_bar(t) = f(t)/f(0) with per-step alpha floored at ``min_alpha``."""
    if T < 1:
        raise ConfigError("T must be >= 1")
    if s <= 0:
        raise ConfigError("schedule offset s must be positive")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2
    raw = f / f[0]
    alpha = np.ones(T + 1)
    alpha[1:] = np.clip(raw[1:] / raw[:-1], min_alpha, 1.0)
    alpha_bar = np.cumprod(alpha)
    return DiffusionSchedule(T, alpha_bar, alpha, signal_scale)


def to_scaled(boxes: np.ndarray, scale: float = SIGNAL_SCALE) -> np.ndarray:
    """[0,1] -> [-scale, scale]."""
    return (np.asarray(boxes, dtype=np.float64) * 2.0 - 1.0) * scale


def from_scaled(z: np.ndarray, scale: float = SIGNAL_SCALE) -> np.ndarray:
    return (np.asarray(z, dtype=np.float64) / scale + 1.0) / 2.0


def _check_t(t: int, sched: DiffusionSchedule) -> None:
    if not 0 <= t <= sched.T:
        raise ConfigError(f"t={t} outside [0, {sched.T}]")


def corrupt_boxes(z0, t: int, sched: DiffusionSchedule, rng: np.random.Generator,
                  noise: np.ndarray | None = None) -> np.ndarray:
    """Draw z_t ~ N(sqrt(abar_t) z0, (1 - abar_t) I) in scaled space.

    ``z0`` is a BoxSet or an array of normalised boxes.
    """
    _check_t(t, sched)
    boxes = z0.boxes if isinstance(z0, BoxSet) else np.asarray(z0, dtype=np.float64)
    zs = to_scaled(boxes, sched.signal_scale)
    eps = rng.standard_normal(zs.shape) if noise is None else np.asarray(noise, dtype=np.float64)
    ab = sched.alpha_bar[t]
    return math.sqrt(ab) * zs + math.sqrt(1.0 - ab) * eps


def pad_gt_boxes(gt: BoxSet, n_train: int, rng: np.random.Generator, background: int,
                 scale: float = SIGNAL_SCALE) -> tuple[BoxSet, np.ndarray]:
    """Ground truth first, then random boxes (standard normal in scaled space) as background."""
    n = len(gt)
    if n > n_train:
        log.warning("truncating %d ground-truth boxes to %d", n, n_train)
        gt = gt.subset(np.arange(n_train))
        n = n_train
    pad = n_train - n
    rand = from_scaled(rng.standard_normal((pad, 4)), scale)
    boxes = np.concatenate([gt.boxes, rand])
    labels = np.concatenate([gt.labels, np.full(pad, background, dtype=np.int64)])
    mask = np.zeros(n_train, dtype=bool)
    mask[:n] = True
    return BoxSet(boxes, labels, np.ones(n_train)), mask


def ddim_step(z_t: np.ndarray, z0_hat: np.ndarray, t: int, t_next: int,
              sched: DiffusionSchedule) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from t to t_next."""
    if not 0 <= t_next < t <= sched.T:
        raise ConfigError(f"need 0 <= t_next < t <= T, got t={t}, t_next={t_next}")
    ab, abn = sched.alpha_bar[t], sched.alpha_bar[t_next]
    eps_hat = (z_t - math.sqrt(ab) * z0_hat) / math.sqrt(1.0 - ab)
    return math.sqrt(abn) * z0_hat + math.sqrt(1.0 - abn) * eps_hat


def box_renewal(boxes: np.ndarray, scores: np.ndarray, thresh: float,
                rng: np.random.Generator) -> np.ndarray:
    """Replace rows scoring below ``thresh`` with fresh standard-normal boxes (scaled space)."""
    if not 0.0 <= thresh <= 1.0:
        raise ConfigError("renewal threshold must lie in [0, 1]")
    out = np.array(boxes, dtype=np.float64, copy=True)
    low = np.asarray(scores) < thresh
    n = int(low.sum())
    if n:
        out[low] = rng.standard_normal((n, 4))
    return out


def nms(boxes: np.ndarray, scores: np.ndarray, labels: np.ndarray, iou_thresh: float = 0.5
        ) -> np.ndarray:
    """Greedy class-aware suppression; returns kept indices in score order."""
    if not 0.0 < iou_thresh < 1.0:
        raise ConfigError("NMS IoU threshold must lie in (0, 1)")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    labels = np.asarray(labels)
    order = score_order(scores)
    ious = iou_matrix(boxes, boxes) if len(boxes) else np.zeros((0, 0))
    suppressed = np.zeros(len(boxes), dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= (labels == labels[i]) & (ious[i] > iou_thresh)
    return np.asarray(keep, dtype=np.intp)


def clamp_boxes(boxes: np.ndarray, min_size: float = 1e-3) -> np.ndarray:
    """Clip corners to the unit square and enforce a minimum width/height."""
    c = np.clip(cxcywh_to_corners(boxes), 0.0, 1.0)
    out = corners_to_cxcywh(c)
    out[:, 2:] = np.maximum(out[:, 2:], min_size)
    return out


class Denoiser(Protocol):
    def encode(self, image: np.ndarray): ...

    def decode(self, features, z_t: np.ndarray, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (z0_hat in scaled space [N,4], class probabilities [N, K+1])."""
        ...


def scores_and_labels(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best foreground class per row; the last column is background."""
    fg = probs[:, :-1]
    labels = np.argmax(fg, axis=1)
    return fg[np.arange(len(fg)), labels], labels


@dataclass
class SamplerConfig:
    N: int = 64
    steps: Sequence[int] = (1000,)
    renew_thresh: float = 0.5
    nms_thresh: float = 0.5
    min_size: float = 1e-3
    clip_denoised: bool = True


def step_pairs(steps: Sequence[int]) -> list[tuple[int, int]]:
    steps = [int(s) for s in steps]
    if not steps or any(b >= a for a, b in zip(steps, steps[1:])) or steps[-1] <= 0:
        raise ConfigError(f"sampling steps must be strictly decreasing and positive: {steps}")
    return list(zip(steps, steps[1:] + [0]))


def sample(model: Denoiser, image: np.ndarray, sched: DiffusionSchedule,
           rng: np.random.Generator, cfg: SamplerConfig | None = None) -> BoxSet:
    """Noise-to-box inference: start from Gaussian boxes and run DDIM to t = 0.

    Renewal is applied between steps (not after the last one); predicted boxes
    are clipped to the signal range before each update when ``clip_denoised``.
    """
    cfg = cfg or SamplerConfig()
    pairs = step_pairs(cfg.steps)
    if pairs[0][0] > sched.T:
        raise ConfigError(f"first step {pairs[0][0]} exceeds T={sched.T}")
    feats = model.encode(image)
    z = rng.standard_normal((cfg.N, 4))
    scores = labels = None
    for i, (t, t_next) in enumerate(pairs):
        z0_hat, probs = model.decode(feats, z, t)
        if cfg.clip_denoised:
            z0_hat = np.clip(z0_hat, -sched.signal_scale, sched.signal_scale)
        scores, labels = scores_and_labels(probs)
        z = ddim_step(z, z0_hat, t, t_next, sched)
        if i < len(pairs) - 1:
            z = box_renewal(z, scores, cfg.renew_thresh, rng)
    boxes = clamp_boxes(from_scaled(z, sched.signal_scale), cfg.min_size)
    keep = nms(boxes, scores, labels, cfg.nms_thresh)
    return BoxSet(boxes[keep], labels[keep], scores[keep])
