"""Plain-text ``key = value`` configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .numerics import ConfigError


@dataclass
class DetectorConfig:
    # data
    image_size: int = 128
    classes: int = 3
    # backbone / neck
    backbone_channels: tuple[int, ...] = (32, 64, 128, 256)
    fpn_width: int = 64
    use_mambasar: bool = True
    # MambaSAR
    mamba_channels: int = 128
    layers: tuple[str, ...] = ("mamba", "mamba", "mamba", "agent", "agent", "agent")
    allow_ablation: bool = False
    ssm_state: int = 16
    chunk: int = 64
    heads: int = 4
    agent_n: int = 16
    mlp_ratio: int = 4
    zero_init_residual: bool = True
    # head
    roi_grid: int = 3
    time_dim: int = 32
    head_hidden: int = 256
    roi_context: float = 3.0
    # diffusion
    T: int = 1000
    schedule_s: float = 0.008
    signal_scale: float = 2.0
    N: int = 64
    N_train: int = 32
    steps: tuple[int, ...] = (1000,)
    renew_thresh: float = 0.5
    nms_thresh: float = 0.5
    min_size: float = 1e-3
    # training
    lr: float = 1.5e-5
    weight_decay: float = 1e-4
    train_steps: int = 2000
    cls_weight: float = 1.0
    t_groups: int = 1
    seed: int = 0
    # evaluation
    conf: float = 0.5

    def replace(self, **kw) -> DetectorConfig:
        return dataclasses.replace(self, **kw)


PATH_KEYS = ("dataset", "test_dataset", "checkpoint", "out", "log")


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.replace(" ", ",").split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str, source: str = "<config>") -> tuple[DetectorConfig, dict[str, str]]:
    """Return the detector config and the path entries; unknown keys are errors."""
    defaults = DetectorConfig()
    known = {f.name for f in fields(DetectorConfig)}
    values: dict = {}
    paths: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in PATH_KEYS:
            paths[key] = raw
        elif key in known:
            values[key] = _coerce(raw, getattr(defaults, key), key)
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    return DetectorConfig(**values), paths


def load_config(path) -> tuple[DetectorConfig, dict[str, str]]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text(), str(p))


def dump_config(cfg: DetectorConfig, paths: dict[str, str] | None = None) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    for k, v in (paths or {}).items():
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
