"""Detector assembly (backbone, optional MambaSAR fusion, FPN, head), training and inference."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DetectorConfig, dump_config, load_config
from .diffusion import (BoxSet, DiffusionSchedule, SamplerConfig, build_schedule, corrupt_boxes,
                        pad_gt_boxes, sample, to_scaled)
from .head import DetectHead, loss_terms
from .mambasar import FPN, Backbone, MambaSAR, MambaSARConfig, fuse_res4
from .numerics import AdamW, Module, Tensor, add, load_checkpoint, mul, save_checkpoint, softmax_np
from .synthdata import SceneSample

log = logging.getLogger(__name__)


class Detector(Module):
    def __init__(self, cfg: DetectorConfig | None = None):
        cfg = cfg or DetectorConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        ch = tuple(cfg.backbone_channels)
        self.backbone = Backbone(ch, 1, rng)
        self.mambasar = None
        if cfg.use_mambasar:
            self.mambasar = MambaSAR(MambaSARConfig(
                in_channels=ch[1], channels=ch[2] if cfg.mamba_channels is None else cfg.mamba_channels,
                layers=tuple(cfg.layers), mlp_ratio=cfg.mlp_ratio, state=cfg.ssm_state,
                heads=cfg.heads, agents=cfg.agent_n, chunk=cfg.chunk,
                allow_ablation=cfg.allow_ablation,
                zero_init_residual=cfg.zero_init_residual), rng)
        self.fpn = FPN(ch[1:], cfg.fpn_width, rng)
        self.head = DetectHead(cfg.fpn_width, cfg.classes, cfg.roi_grid, cfg.time_dim,
                               cfg.head_hidden, rng, cfg.signal_scale, cfg.min_size,
                               cfg.roi_context)
        self.schedule = build_schedule(cfg.T, cfg.schedule_s, cfg.signal_scale)

    def features(self, image) -> dict[int, Tensor]:
        img = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float64))
        hook = None
        if self.mambasar is not None:
            hook = lambda res4, res3: fuse_res4(res4, res3, self.mambasar)  # noqa: E731
        return self.fpn(self.backbone(img, hook))

    def forward(self, image, z_t: np.ndarray, t: int):
        fp = self.features(image)
        H, W = np.asarray(image.data if isinstance(image, Tensor) else image).shape[-2:]
        return self.head(fp, z_t, t, (H, W))

    # Denoiser protocol used by ``diffusion.sample``
    def encode(self, image: np.ndarray):
        return self.features(image), np.asarray(image).shape[-2:]

    def decode(self, feats, z_t: np.ndarray, t: int):
        fp, hw = feats
        z0_hat, logits = self.head(fp, z_t, t, tuple(hw))
        return z0_hat.data, softmax_np(logits.data)

    def sampler_config(self, **kw) -> SamplerConfig:
        c = self.cfg
        base = dict(N=c.N, steps=tuple(c.steps), renew_thresh=c.renew_thresh,
                    nms_thresh=c.nms_thresh, min_size=c.min_size)
        base.update(kw)
        return SamplerConfig(**base)

    def detect(self, image: np.ndarray, seed: int, **kw) -> BoxSet:
        rng = np.random.default_rng(seed)
        return sample(self, image, self.schedule, rng, self.sampler_config(**kw))

    # persistence
    def save(self, directory) -> None:
        save_checkpoint(directory, self.state_dict(), {"config.cfg": dump_config(self.cfg)})

    @classmethod
    def load(cls, directory) -> Detector:
        cfg, _ = load_config(Path(directory) / "config.cfg")
        model = cls(cfg)
        model.load_state_dict(load_checkpoint(directory))
        return model


def training_example(scene: SceneSample, cfg: DetectorConfig, sched: DiffusionSchedule,
                     rng: np.random.Generator):
    """(z_t, t, scaled targets, labels, origin mask) for one scene."""
    padded, mask = pad_gt_boxes(scene.gt, cfg.N_train, rng, background=cfg.classes,
                                scale=cfg.signal_scale)
    t = int(rng.integers(0, cfg.T + 1))
    z_t = corrupt_boxes(padded, t, sched, rng)
    return z_t, t, to_scaled(padded.boxes, cfg.signal_scale), padded.labels, mask


def loss_on(model: Detector, scene: SceneSample, z_t, t, z0, labels, mask):
    z0_hat, logits = model.forward(scene.image, z_t, t)
    box, cls = loss_terms(z0_hat, logits, z0, labels, mask)
    return box, cls, add(box, mul(cls, model.cfg.cls_weight))


def scene_loss(model: Detector, scene: SceneSample, rng: np.random.Generator, groups: int = 1):
    """Mean loss over ``groups`` independent (padding, t) draws sharing one feature pass."""
    cfg = model.cfg
    fp = model.features(scene.image)
    hw = scene.image.shape[-2:]
    box_sum = cls_sum = None
    for _ in range(groups):
        z_t, t, z0, labels, mask = training_example(scene, cfg, model.schedule, rng)
        z0_hat, logits = model.head(fp, z_t, t, hw)
        box, cls = loss_terms(z0_hat, logits, z0, labels, mask)
        box_sum = box if box_sum is None else add(box_sum, box)
        cls_sum = cls if cls_sum is None else add(cls_sum, cls)
    box, cls = mul(box_sum, 1.0 / groups), mul(cls_sum, 1.0 / groups)
    return box, cls, add(box, mul(cls, cfg.cls_weight))


@dataclass
class TrainResult:
    steps: int
    seconds: float
    last_loss: float


def train(model: Detector, scenes: list[SceneSample], steps: int | None = None,
          log_path=None, seed: int | None = None, lr: float | None = None,
          time_budget: float | None = None) -> TrainResult:
    """Single-scene AdamW steps with cosine learning-rate decay.

    Writes ``step,box_loss,cls_loss,total`` rows to ``log_path`` when given.
    """
    cfg = model.cfg
    steps = cfg.train_steps if steps is None else steps
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    base_lr = cfg.lr if lr is None else lr
    opt = AdamW(model.parameters(), lr=base_lr, weight_decay=cfg.weight_decay)
    fh = open(log_path, "w", newline="") if log_path else None
    writer = csv.writer(fh, lineterminator="\n") if fh else None
    if writer:
        writer.writerow(["step", "box_loss", "cls_loss", "total"])
    start = time.perf_counter()
    total_val = float("nan")
    done = 0
    try:
        for step in range(steps):
            if time_budget is not None and time.perf_counter() - start > time_budget:
                log.warning("time budget reached after %d steps", step)
                break
            scene = scenes[int(rng.integers(len(scenes)))]
            opt.zero_grad()
            box, cls, total = scene_loss(model, scene, rng, cfg.t_groups)
            total.backward()
            cur = base_lr * 0.5 * (1.0 + np.cos(np.pi * step / max(steps, 1)))
            opt.step(cur)
            total_val = total.item()
            done = step + 1
            if writer:
                writer.writerow([step, f"{box.item():.6f}", f"{cls.item():.6f}", f"{total_val:.6f}"])
    finally:
        if fh:
            fh.close()
    return TrainResult(done, time.perf_counter() - start, total_val)


def detect_dataset(model: Detector, scenes: list[SceneSample], seed: int = 0, **kw) -> list[BoxSet]:
    """Detections per scene; scene ``i`` samples with seed ``(seed, scene.seed)``."""
    out = []
    for scene in scenes:
        rng = np.random.default_rng([seed, scene.seed])
        out.append(sample(model, scene.image, model.schedule, rng, model.sampler_config(**kw)))
    return out
