"""MambaBlock, the hybrid MambaSAR token mixer, the CNN stem and the FPN neck."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import DEFAULT_AGENTS, DEFAULT_HEADS, AgentAttentionBlock
from .numerics import (ConfigError, DimensionError, Module, Param, Tensor, add, as_tensor, concat,
                       conv1d_depthwise, conv2d, layer_norm, linear, ones, silu, transpose,
                       upsample_nearest2x, xavier, zeros)
from .ssm import DEFAULT_CHUNK, DEFAULT_STATE, SARScan, grid_to_tokens, tokens_to_grid

DEFAULT_PATTERN = ("mamba", "mamba", "mamba", "agent", "agent", "agent")
LAYER_KINDS = {"mamba", "agent"}


@dataclass
class MambaSARConfig:
    in_channels: int = 64
    channels: int = 128
    layers: tuple[str, ...] = DEFAULT_PATTERN
    mlp_ratio: int = 4
    downsample_stride: int = 2
    state: int = DEFAULT_STATE
    heads: int = DEFAULT_HEADS
    agents: int = DEFAULT_AGENTS
    conv_width: int = 3
    chunk: int | None = DEFAULT_CHUNK
    tied_scan: bool = False
    allow_ablation: bool = False
    zero_init_residual: bool = True

    def validate(self) -> None:
        kinds = tuple(self.layers)
        bad = [k for k in kinds if k not in LAYER_KINDS]
        if bad:
            raise ConfigError(f"unknown layer kinds {bad}; expected {sorted(LAYER_KINDS)}")
        if kinds != DEFAULT_PATTERN and not self.allow_ablation:
            raise ConfigError(f"layer pattern {list(kinds)} differs from "
                              f"{list(DEFAULT_PATTERN)}; set allow_ablation to run it")
        if self.channels % 2:
            raise ConfigError(f"MambaSAR width must be even, got {self.channels}")
        if self.channels % self.heads:
            raise ConfigError(f"width {self.channels} not divisible by {self.heads} heads")
        if self.downsample_stride < 1:
            raise ConfigError("downsample stride must be >= 1")


def conv_param(rng, cout: int, cin: int, k: int) -> Param:
    return xavier(rng, (cout, cin, k, k), cin * k * k, cout * k * k)


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Layer norm over the channel axis of a [C,H,W] map."""
    return transpose(layer_norm(transpose(x, (1, 2, 0)), gamma, beta), (2, 0, 1))


class MambaBlock(Module):
    """Two-branch token mixer: (linear, conv, silu, 4-way scan) alongside (linear, conv, silu)."""

    def __init__(self, channels: int, state: int = DEFAULT_STATE, conv_width: int = 3,
                 rng: np.random.Generator | None = None, chunk: int | None = DEFAULT_CHUNK,
                 tied_scan: bool = False):
        if channels % 2:
            raise ConfigError(f"MambaBlock needs an even width, got {channels}")
        if conv_width % 2 == 0:
            raise ConfigError(f"conv width must be odd, got {conv_width}")
        rng = rng or np.random.default_rng(0)
        half = channels // 2
        self.W_ssm = xavier(rng, (channels, half), channels, half)
        self.b_ssm = zeros(half)
        self.k_ssm = xavier(rng, (half, conv_width), conv_width, conv_width)
        self.scan = SARScan(half, state, tied=tied_scan, rng=rng, chunk=chunk)
        self.W_sym = xavier(rng, (channels, half), channels, half)
        self.b_sym = zeros(half)
        self.k_sym = xavier(rng, (half, conv_width), conv_width, conv_width)
        self.W_out = xavier(rng, (channels, channels), channels, channels)
        self.b_out = zeros(channels)

    def ssm_branch(self, x: Tensor, H: int, W: int) -> Tensor:
        h = silu(conv1d_depthwise(linear(x, self.W_ssm, self.b_ssm), self.k_ssm))
        return self.scan.forward_tokens(h, H, W)

    def sym_branch(self, x: Tensor) -> Tensor:
        return silu(conv1d_depthwise(linear(x, self.W_sym, self.b_sym), self.k_sym))

    def __call__(self, x: Tensor, H: int, W: int) -> Tensor:
        if x.shape[1] % 2:
            raise ConfigError(f"MambaBlock input width must be even, got {x.shape[1]}")
        mixed = concat([self.ssm_branch(x, H, W), self.sym_branch(x)], axis=1)
        return linear(mixed, self.W_out, self.b_out)

    def output_params(self):
        return [self.W_out, self.b_out]


def mamba_block(x: Tensor, p: MambaBlock, H: int, W: int) -> Tensor:
    return p(as_tensor(x), H, W)


class MLP(Module):
    def __init__(self, channels: int, ratio: int = 4, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        hidden = channels * ratio
        self.W1 = xavier(rng, (channels, hidden), channels, hidden)
        self.b1 = zeros(hidden)
        self.W2 = xavier(rng, (hidden, channels), hidden, channels)
        self.b2 = zeros(channels)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(silu(linear(x, self.W1, self.b1)), self.W2, self.b2)

    def output_params(self):
        return [self.W2, self.b2]


class Norm(Module):
    def __init__(self, channels: int):
        self.gamma = ones(channels)
        self.beta = zeros(channels)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class HybridLayer(Module):
    """x_hat = block(norm(x)) + x;  out = mlp(norm(x_hat)) + x_hat."""

    def __init__(self, kind: str, cfg: MambaSARConfig, rng: np.random.Generator):
        C = cfg.channels
        self.kind = kind
        self.norm1 = Norm(C)
        if kind == "mamba":
            self.block = MambaBlock(C, cfg.state, cfg.conv_width, rng, cfg.chunk, cfg.tied_scan)
        else:
            self.block = AgentAttentionBlock(C, cfg.heads, cfg.agents, rng)
        self.norm2 = Norm(C)
        self.mlp = MLP(C, cfg.mlp_ratio, rng)

    def __call__(self, x: Tensor, H: int, W: int) -> Tensor:
        h = self.norm1(x)
        mixed = self.block(h, H, W) if self.kind == "mamba" else self.block(h)
        x_hat = add(mixed, x)
        return add(self.mlp(self.norm2(x_hat)), x_hat)


class MambaSAR(Module):
    """Strided-conv downsample, then the 6-layer hybrid stack over the grid's tokens."""

    def __init__(self, cfg: MambaSARConfig | None = None, rng: np.random.Generator | None = None):
        cfg = cfg or MambaSARConfig()
        cfg.validate()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.down_k = conv_param(rng, cfg.channels, cfg.in_channels, 3)
        self.down_b = zeros(cfg.channels)
        self.layers = [HybridLayer(kind, cfg, rng) for kind in cfg.layers]
        if cfg.zero_init_residual:
            self.zero_residual_outputs()

    def downsample(self, x: Tensor) -> Tensor:
        return conv2d(x, self.down_k, self.down_b, stride=self.cfg.downsample_stride, pad=1)

    def __call__(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        _, H3, W3 = x.shape
        s = self.cfg.downsample_stride
        if H3 % s or W3 % s:
            raise ConfigError(f"MambaSAR input {H3}x{W3} not divisible by stride {s}")
        y = self.downsample(x)
        _, H, W = y.shape
        tokens = grid_to_tokens(y)
        for layer in self.layers:
            tokens = layer(tokens, H, W)
        return tokens_to_grid(tokens, H, W)

    def zero_residual_outputs(self) -> None:
        """Zero every residual branch's last projection (layers become identities)."""
        for layer in self.layers:
            for p in layer.block.output_params() + layer.mlp.output_params():
                p.data[...] = 0.0


def mambasar_forward(x: Tensor, module: MambaSAR) -> Tensor:
    return module(x)


def fuse_res4(res4: Tensor, res3: Tensor, module: MambaSAR) -> Tensor:
    """res4 + MambaSAR(res3)."""
    extra = module(res3)
    if extra.shape != as_tensor(res4).shape:
        raise DimensionError(f"MambaSAR output {extra.shape} does not match Res4 {res4.shape}")
    return add(res4, extra)


# backbone ---------------------------------------------------------------

BACKBONE_CHANNELS = (32, 64, 128, 256)
STAGE_NAMES = ("Res2", "Res3", "Res4", "Res5")


class ConvStage(Module):
    """(conv -> channel layer norm -> silu) twice."""

    def __init__(self, cin: int, cout: int, strides: tuple[int, int], rng: np.random.Generator):
        self.strides = strides
        self.k1 = conv_param(rng, cout, cin, 3)
        self.b1 = zeros(cout)
        self.g1, self.n1 = ones(cout), zeros(cout)
        self.k2 = conv_param(rng, cout, cout, 3)
        self.b2 = zeros(cout)
        self.g2, self.n2 = ones(cout), zeros(cout)

    def __call__(self, x: Tensor) -> Tensor:
        x = silu(channel_norm(conv2d(x, self.k1, self.b1, self.strides[0], 1), self.g1, self.n1))
        return silu(channel_norm(conv2d(x, self.k2, self.b2, self.strides[1], 1), self.g2, self.n2))


class Backbone(Module):
    """Four conv stages at strides 4/8/16/32."""

    def __init__(self, channels=BACKBONE_CHANNELS, in_channels: int = 1,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.channels = tuple(channels)
        cins = (in_channels,) + self.channels[:-1]
        stride_pairs = ((2, 2), (2, 1), (2, 1), (2, 1))
        self.stages = [ConvStage(ci, co, st, rng)
                       for ci, co, st in zip(cins, self.channels, stride_pairs)]

    def __call__(self, img: Tensor, res4_hook=None) -> dict[str, Tensor]:
        """``res4_hook(res4, res3)`` may replace Res4 before Res5 is computed."""
        img = as_tensor(img)
        _, H, W = img.shape
        if H % 32 or W % 32:
            raise ConfigError(f"image {H}x{W} must be divisible by 32")
        out = {}
        x = img
        for name, stage in zip(STAGE_NAMES, self.stages):
            x = stage(x)
            if name == "Res4" and res4_hook is not None:
                x = res4_hook(x, out["Res3"])
            out[name] = x
        return out


def backbone_forward(img: Tensor, backbone: Backbone) -> dict[str, Tensor]:
    return backbone(img)


# FPN --------------------------------------------------------------------

PYRAMID_STRIDES = (8, 16, 32)


class FPN(Module):
    """1x1 laterals to a common width, nearest 2x top-down sum, 3x3 smoothing."""

    def __init__(self, in_channels=(64, 128, 256), width: int = 64,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.width = width
        self.lat_k = [conv_param(rng, width, c, 1) for c in in_channels]
        self.lat_b = [zeros(width) for _ in in_channels]
        self.smooth_k = [conv_param(rng, width, width, 3) for _ in in_channels]
        self.smooth_b = [zeros(width) for _ in in_channels]

    def __call__(self, stages: dict[str, Tensor]) -> dict[int, Tensor]:
        names = ("Res3", "Res4", "Res5")
        missing = [n for n in names if n not in stages]
        if missing:
            raise ConfigError(f"FPN needs stages {missing}")
        lats = [conv2d(stages[n], k, b) for n, k, b in zip(names, self.lat_k, self.lat_b)]
        merged = [None, None, lats[2]]
        for i in (1, 0):
            merged[i] = add(lats[i], upsample_nearest2x(merged[i + 1]))
        return {s: conv2d(m, k, b, 1, 1)
                for s, m, k, b in zip(PYRAMID_STRIDES, merged, self.smooth_k, self.smooth_b)}


def fpn_forward(stages: dict[str, Tensor], fpn: FPN) -> dict[int, Tensor]:
    return fpn(stages)
