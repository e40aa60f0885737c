"""Finite-difference gradient checks for every differentiable layer and a toy end-to-end model.

Each check builds a tiny instance, reduces its output to a scalar through a
fixed random projection, and compares backprop against central differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import attention, head, mambasar, ssm
from .numerics import (GradReport, Module, Tensor, concat, conv1d_depthwise, conv2d, cross_entropy,
                       exp, grad_check, layer_norm, linear, log, matmul, mul, sigmoid, silu,
                       softmax_rows, softplus, square, take_rows, transpose, tsum,
                       upsample_nearest2x)

GRAD_EPS = 1e-5
GRAD_TOL = 1e-4


def _leaf(rng: np.random.Generator, *shape, scale: float = 1.0) -> Tensor:
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


def _project(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    R = Tensor(rng.standard_normal(out.shape))
    return lambda y: tsum(mul(y, R))


def _check(fn: Callable[[], Tensor], params, rng) -> GradReport:
    proj = _project(fn(), rng)
    return grad_check(lambda: proj(fn()), params, GRAD_EPS, GRAD_TOL)


def _named(module: Module, prefix: str = "") -> list[tuple[str, Tensor]]:
    return [(prefix + n, p) for n, p in module.named_parameters()]


# layer checks -------------------------------------------------------------

def check_elementwise(rng):
    x = _leaf(rng, 3, 4)
    y = Tensor(np.abs(rng.standard_normal((3, 4))) + 0.5, requires_grad=True)
    return _check(lambda: concat([exp(x), log(y), sigmoid(x), silu(x), softplus(x), square(x)], 1),
                  [("x", x), ("y", y)], rng)


def check_matmul(rng):
    a, b, c = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 5), _leaf(rng, 5, 2)
    return _check(lambda: matmul(matmul(a, b), c), [("a", a), ("b", b), ("c", c)], rng)


def check_linear(rng):
    x, W, b = _leaf(rng, 5, 4), _leaf(rng, 4, 3), _leaf(rng, 3)
    return _check(lambda: linear(x, W, b), [("x", x), ("W", W), ("b", b)], rng)


def check_layer_norm(rng):
    x, g, b = _leaf(rng, 4, 6), _leaf(rng, 6), _leaf(rng, 6)
    return _check(lambda: layer_norm(x, g, b), [("x", x), ("gamma", g), ("beta", b)], rng)


def check_softmax(rng):
    x = _leaf(rng, 3, 5)
    return _check(lambda: softmax_rows(x), [("x", x)], rng)


def check_cross_entropy(rng):
    z = _leaf(rng, 6, 4)
    labels = rng.integers(0, 4, size=6)
    return grad_check(lambda: cross_entropy(z, labels), [("logits", z)], GRAD_EPS, GRAD_TOL)


def check_conv2d(rng):
    x, k, b = _leaf(rng, 2, 6, 6), _leaf(rng, 3, 2, 3, 3), _leaf(rng, 3)
    k2 = _leaf(rng, 2, 3, 1, 1)
    return _check(lambda: conv2d(conv2d(x, k, b, stride=2, pad=1), k2),
                  [("x", x), ("k3x3", k), ("b", b), ("k1x1", k2)], rng)


def check_conv1d(rng):
    x, k = _leaf(rng, 7, 3), _leaf(rng, 3, 3)
    return _check(lambda: conv1d_depthwise(x, k), [("x", x), ("k", k)], rng)


def check_upsample_gather(rng):
    x = _leaf(rng, 2, 3, 3)
    idx = np.array([4, 0, 2, 2])
    return _check(lambda: concat([transpose(upsample_nearest2x(x), (1, 2, 0)).reshape(36, 2),
                                  take_rows(x.reshape(2, 9).T, idx)], 0), [("x", x)], rng)


def check_selective_scan(rng):
    p = ssm.SSMParams(3, 4, rng)
    u = _leaf(rng, 10, 3)
    return _check(lambda: ssm.s6_scan_parallel(u, p, chunk=4), [("u", u)] + _named(p), rng)


def check_sar_scan(rng):
    sc = ssm.SARScan(2, 2, rng=rng, chunk=4)
    x = _leaf(rng, 2, 3, 4)
    return _check(lambda: sc.forward_grid(x), [("x", x)] + _named(sc), rng)


def check_mamba_block(rng):
    blk = mambasar.MambaBlock(4, 2, rng=rng, chunk=4)
    x = _leaf(rng, 9, 4)
    return _check(lambda: blk(x, 3, 3), [("x", x)] + _named(blk), rng)


def check_attention(rng):
    Q, K, V = _leaf(rng, 6, 4), _leaf(rng, 7, 4), _leaf(rng, 7, 4)
    return _check(lambda: attention.softmax_attention(Q, K, V, heads=2),
                  [("Q", Q), ("K", K), ("V", V)], rng)


def check_agent_block(rng):
    blk = attention.AgentAttentionBlock(4, heads=2, agents=3, rng=rng)
    x = _leaf(rng, 8, 4)
    return _check(lambda: blk(x), [("x", x)] + _named(blk), rng)


def _tiny_sar_cfg(**kw) -> mambasar.MambaSARConfig:
    base = dict(in_channels=2, channels=4, mlp_ratio=2, state=2, heads=2, agents=2, chunk=4,
                zero_init_residual=False)
    base.update(kw)
    return mambasar.MambaSARConfig(**base)


def check_hybrid_layers(rng):
    cfg = _tiny_sar_cfg()
    layers = [mambasar.HybridLayer(k, cfg, rng) for k in ("mamba", "agent")]
    x = _leaf(rng, 4, 4)

    def fn():
        h = x
        for layer in layers:
            h = layer(h, 2, 2)
        return h

    return _check(fn, [("x", x)] + [p for i, m in enumerate(layers) for p in _named(m, f"l{i}.")], rng)


def check_fuse_res4(rng):
    """fuse_res4 through the full 6-layer MambaSAR on a 16x16 input."""
    mod = mambasar.MambaSAR(_tiny_sar_cfg(state=1, chunk=16), rng)
    res3 = _leaf(rng, 2, 16, 16)
    res4 = _leaf(rng, 4, 8, 8)
    return _check(lambda: mambasar.fuse_res4(res4, res3, mod),
                  [("res3", res3), ("res4", res4)] + _named(mod, "mambasar."), rng)


def check_backbone_fpn(rng):
    bb = mambasar.Backbone((2, 2, 2, 2), 1, rng)
    fpn = mambasar.FPN((2, 2, 2), 2, rng)
    img = _leaf(rng, 1, 32, 32)

    def fn():
        fp = fpn(bb(img))
        return concat([fp[s].reshape(2, -1) for s in sorted(fp)], 1)

    return _check(fn, [("img", img)] + _named(bb, "backbone.") + _named(fpn, "fpn."), rng)


def check_roi_pool(rng):
    fp = {8: _leaf(rng, 2, 4, 4), 16: _leaf(rng, 2, 2, 2), 32: _leaf(rng, 2, 1, 1)}
    boxes = np.array([[0.4, 0.5, 0.3, 0.2], [0.55, 0.45, 0.9, 0.8]])
    return _check(lambda: head.roi_pool_batch(fp, boxes, 2, (32, 32)),
                  [(f"P{s}", t) for s, t in fp.items()], rng)


def check_head_loss(rng):
    """train_loss composed with head_forward on a 2-box instance."""
    hd = head.DetectHead(2, 2, grid=2, time_dim=4, hidden=6, rng=rng)
    fp = {8: _leaf(rng, 2, 4, 4), 16: _leaf(rng, 2, 2, 2), 32: _leaf(rng, 2, 1, 1)}
    z_t = rng.standard_normal((2, 4)) * 0.5
    z0 = rng.standard_normal((2, 4)) * 0.5
    labels = np.array([1, 2])
    mask = np.array([True, False])

    def fn():
        z0_hat, logits = hd(fp, z_t, 37, (32, 32))
        return head.train_loss(z0_hat, logits, z0, labels, mask)

    return grad_check(fn, _named(hd, "head.") + [(f"P{s}", t) for s, t in fp.items()],
                      GRAD_EPS, GRAD_TOL)


def toy_detector():
    """Smallest complete detector: 64x64 image, 8x8 Res3, MambaSAR fusion, 2 classes."""
    from .config import DetectorConfig
    from .model import Detector
    cfg = DetectorConfig(image_size=64, classes=2, backbone_channels=(2, 2, 4, 4), fpn_width=2,
                         mamba_channels=4, ssm_state=2, chunk=8, heads=2, agent_n=2, mlp_ratio=1,
                         zero_init_residual=False, roi_grid=1, time_dim=2, head_hidden=4,
                         N_train=3, seed=3)
    return Detector(cfg)


def check_end_to_end(rng):
    """backbone -> fuse_res4 -> FPN -> head -> loss on the toy detector."""
    from .diffusion import BoxSet, corrupt_boxes, pad_gt_boxes, to_scaled
    model = toy_detector()
    cfg = model.cfg
    img = np.abs(rng.standard_normal((1, 64, 64)))
    gt = BoxSet(np.array([[0.3, 0.4, 0.2, 0.25], [0.7, 0.6, 0.3, 0.2]]), np.array([0, 1]))
    padded, mask = pad_gt_boxes(gt, cfg.N_train, rng, background=cfg.classes)
    z_t = corrupt_boxes(padded, 120, model.schedule, rng)
    z0 = to_scaled(padded.boxes)

    def fn():
        z0_hat, logits = model.forward(img, z_t, 120)
        return head.train_loss(z0_hat, logits, z0, padded.labels, mask)

    return grad_check(fn, model.named_parameters(), GRAD_EPS, GRAD_TOL)


CHECKS: dict[str, Callable[[np.random.Generator], GradReport]] = {
    "elementwise": check_elementwise,
    "matmul": check_matmul,
    "linear": check_linear,
    "layer_norm": check_layer_norm,
    "softmax": check_softmax,
    "cross_entropy": check_cross_entropy,
    "conv2d": check_conv2d,
    "conv1d_depthwise": check_conv1d,
    "upsample_gather": check_upsample_gather,
    "selective_scan": check_selective_scan,
    "sar_scan": check_sar_scan,
    "mamba_block": check_mamba_block,
    "softmax_attention": check_attention,
    "agent_attention_block": check_agent_block,
    "hybrid_layers": check_hybrid_layers,
    "fuse_res4": check_fuse_res4,
    "backbone_fpn": check_backbone_fpn,
    "roi_pool": check_roi_pool,
    "head_loss": check_head_loss,
    "end_to_end": check_end_to_end,
}


@dataclass
class SuiteResult:
    name: str
    report: GradReport
    seconds: float

    @property
    def ok(self) -> bool:
        return self.report.ok


def run_suite(seed: int = 0, names=None) -> list[SuiteResult]:
    out = []
    for name in names or CHECKS:
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        t0 = time.perf_counter()
        rep = CHECKS[name](rng)
        out.append(SuiteResult(name, rep, time.perf_counter() - t0))
    return out
