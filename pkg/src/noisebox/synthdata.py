"""Synthetic SAR-like scenes: discrete bright scatterers on multiplicative speckle."""

from __future__ import annotations

import csv
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .diffusion import BoxSet
from .numerics import ConfigError

GRID_MAGIC = b"MDG1"
CLASS_NAMES = ("cross", "line", "L")
PSF_SIGMA = 1.0
SPACING_PX = (6.0, 10.0)
PSF_RADIUS = 3
TARGET_GAIN = (4.0, 6.0)
BASE_LEVEL = 0.12
MIN_BOX_PX = 4.0
BOX_PAD = 0.10


class ParseError(ValueError):
    pass


@dataclass
class SceneSample:
    image: np.ndarray  # [1,H,W], nonnegative
    gt: BoxSet
    seed: int
    scatterers: list[np.ndarray] | None = None  # per target, [k,2] pixel (y, x)


# layouts ----------------------------------------------------------------

def _split(rng: np.random.Generator, total: int, parts: int) -> list[int]:
    """``total`` items over ``parts`` arms, each arm at least one."""
    counts = [1] * parts
    for _ in range(total - parts):
        counts[rng.integers(parts)] += 1
    return counts


def layout(cls: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-spaced scatterer offsets (y, x) for a class shape, before rotation."""
    pts = []
    if cls == 0:
        count = max(count, 5)
        pts.append((0, 0))
        arms = _split(rng, count - 1, 4)
        for (dy, dx), n in zip(((0, 1), (0, -1), (1, 0), (-1, 0)), arms):
            pts.extend((dy * k, dx * k) for k in range(1, n + 1))
    elif cls == 1:
        pts.extend((0, k) for k in range(count))
    elif cls == 2:
        pts.append((0, 0))
        a, b = _split(rng, count - 1, 2)
        pts.extend((0, k) for k in range(1, a + 1))
        pts.extend((k, 0) for k in range(1, b + 1))
    else:
        raise ConfigError(f"no layout for class {cls}; at most {len(CLASS_NAMES)} classes")
    return np.asarray(pts, dtype=np.float64)


def _rotate(pts: np.ndarray, theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return pts @ np.array([[c, s], [-s, c]])


def layout_features(pts: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """(collinear, has a junction of degree >= 3) of a scatterer set."""
    p = pts - pts.mean(axis=0)
    sv = np.linalg.svd(p, compute_uv=False)
    collinear = float(len(pts) < 3 or sv[1] < 1e-6 * max(sv[0], 1e-12))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    adjacent = np.abs(d - spacing) < 1e-6 * spacing
    junction = float(adjacent.sum(axis=1).max() >= 3)
    return np.array([collinear, junction])


TEMPLATES = {0: np.array([0.0, 1.0]), 1: np.array([1.0, 0.0]), 2: np.array([0.0, 0.0])}


def classify_layout(pts: np.ndarray, spacing: float = 1.0) -> int:
    """Nearest class template under L1 distance on ``layout_features``."""
    f = layout_features(pts, spacing)
    return min(TEMPLATES, key=lambda c: np.abs(TEMPLATES[c] - f).sum())


# rendering --------------------------------------------------------------

def _smooth_field(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W] / max(H, W)
    field = np.zeros((H, W))
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.0, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        field += np.cos(2 * np.pi * (fy * yy + fx * xx) + ph)
    return BASE_LEVEL * (1.0 + 0.15 * field / 3.0)


def _splat(img: np.ndarray, y: float, x: float, amp: float, sigma: float) -> None:
    H, W = img.shape
    cy, cx = int(round(y)), int(round(x))
    y0, y1 = max(cy - PSF_RADIUS, 0), min(cy + PSF_RADIUS + 1, H)
    x0, x1 = max(cx - PSF_RADIUS, 0), min(cx + PSF_RADIUS + 1, W)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    img[y0:y1, x0:x1] += amp * np.exp(-((yy - y) ** 2 + (xx - x) ** 2) / (2 * sigma ** 2))


def _blob(img: np.ndarray, y: float, x: float, amp: float, sigma: float) -> None:
    H, W = img.shape
    yy, xx = np.mgrid[0:H, 0:W]
    img += amp * np.exp(-((yy - y) ** 2 + (xx - x) ** 2) / (2 * sigma ** 2))


def _box_from_points(pts: np.ndarray, H: int, W: int) -> np.ndarray:
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ext = hi - lo
    lo = lo - BOX_PAD * ext
    hi = hi + BOX_PAD * ext
    size = np.maximum(hi - lo, MIN_BOX_PX)
    centre = (lo + hi) / 2.0
    # clip inside the image while keeping the minimum size
    centre = np.clip(centre, size / 2.0, np.array([H, W]) - size / 2.0)
    cy, cx = centre
    h, w = size
    return np.array([cx / W, cy / H, w / W, h / H])


def gen_scene(seed: int, H: int = 128, W: int = 128, class_count: int = 3,
              max_targets: int = 6) -> SceneSample:
    """Deterministic scene for ``seed``: 1..max_targets targets of ``class_count`` shapes."""
    if H % 32 or W % 32:
        raise ConfigError(f"scene size {H}x{W} must be divisible by 32")
    if not 1 <= class_count <= len(CLASS_NAMES):
        raise ConfigError(f"class_count must be in [1, {len(CLASS_NAMES)}]")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), H, W, class_count]))
    clean = _smooth_field(rng, H, W)
    for _ in range(rng.integers(0, 4)):
        _blob(clean, rng.uniform(0, H), rng.uniform(0, W), rng.uniform(0.1, 0.3),
              rng.uniform(2.0, 5.0))

    n_targets = int(rng.integers(1, max_targets + 1))
    boxes, labels, scatter = [], [], []
    occupied: list[np.ndarray] = []
    attempts = 0
    while len(boxes) < n_targets and attempts < 200:
        attempts += 1
        cls = int(rng.integers(class_count))
        count = int(rng.integers(3, 10))
        spacing = rng.uniform(*SPACING_PX)
        pts = _rotate(layout(cls, count, rng), rng.uniform(0, 2 * np.pi)) * spacing
        pts -= (pts.min(axis=0) + pts.max(axis=0)) / 2.0
        margin = np.abs(pts).max(axis=0) + PSF_RADIUS + 2
        if np.any(2 * margin >= [H, W]):
            continue
        centre = np.array([rng.uniform(margin[0], H - margin[0]), rng.uniform(margin[1], W - margin[1])])
        pts = pts + centre
        box = _box_from_points(pts, H, W)
        corners = np.array([box[0] - box[2] / 2, box[1] - box[3] / 2,
                            box[0] + box[2] / 2, box[1] + box[3] / 2])
        gap = 2.0 / max(H, W)
        if any(corners[0] < o[2] + gap and o[0] < corners[2] + gap and
               corners[1] < o[3] + gap and o[1] < corners[3] + gap for o in occupied):
            continue
        occupied.append(corners)
        gain = rng.uniform(*TARGET_GAIN)
        for y, x in pts:
            _splat(clean, y, x, gain * rng.uniform(0.7, 1.3), PSF_SIGMA)
        boxes.append(box)
        labels.append(cls)
        scatter.append(pts)
    speckle = rng.exponential(1.0, size=(H, W))
    image = (clean * speckle)[None]
    gt = BoxSet(np.asarray(boxes).reshape(-1, 4), np.asarray(labels, dtype=np.int64))
    return SceneSample(image, gt, int(seed), scatter)


# files ------------------------------------------------------------------

def write_grid(path, image: np.ndarray) -> None:
    img = np.asarray(image).reshape(image.shape[-2:])
    H, W = img.shape
    Path(path).write_bytes(GRID_MAGIC + struct.pack("<II", H, W) + img.astype("<f4").tobytes())


def read_grid(path) -> np.ndarray:
    p = Path(path)
    buf = p.read_bytes()
    if len(buf) < 12:
        raise ParseError(f"{p}: truncated header, file ends at byte offset {len(buf)}")
    if buf[:4] != GRID_MAGIC:
        raise ParseError(f"{p}: bad magic {buf[:4]!r} at byte offset 0")
    H, W = struct.unpack_from("<II", buf, 4)
    need = 12 + 4 * H * W
    if len(buf) < need:
        raise ParseError(f"{p}: truncated pixel data, expected {need} bytes, "
                         f"file ends at byte offset {len(buf)}")
    if len(buf) > need:
        raise ParseError(f"{p}: {len(buf) - need} trailing bytes after byte offset {need}")
    return np.frombuffer(buf, dtype="<f4", offset=12, count=H * W).reshape(1, H, W).astype(np.float64)


BOX_HEADER = ["class", "cx", "cy", "w", "h"]


def write_boxes(path, gt: BoxSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOX_HEADER)
        for lab, b in zip(gt.labels, gt.boxes):
            w.writerow([int(lab)] + [repr(float(v)) for v in b])


def read_boxes(path) -> BoxSet:
    p = Path(path)
    with open(p, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != BOX_HEADER:
        raise ParseError(f"{p}:1: expected header {','.join(BOX_HEADER)}")
    labels, boxes = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 5:
            raise ParseError(f"{p}:{lineno}: expected 5 fields, got {len(row)}")
        try:
            labels.append(int(row[0]))
            boxes.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ParseError(f"{p}:{lineno}: {exc}") from None
    return BoxSet(np.asarray(boxes).reshape(-1, 4), np.asarray(labels, dtype=np.int64))


def write_dataset(directory, seeds: Iterable[int], H: int = 128, W: int = 128,
                  class_count: int = 3) -> list[SceneSample]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    scenes = []
    for seed in seeds:
        s = gen_scene(seed, H, W, class_count)
        write_grid(d / f"scene_{seed}.grid", s.image)
        write_boxes(d / f"scene_{seed}.boxes.csv", s.gt)
        scenes.append(s)
    return scenes


_SCENE_RE = re.compile(r"scene_(\d+)\.grid$")


def read_dataset(directory) -> list[SceneSample]:
    d = Path(directory)
    if not d.is_dir():
        raise ParseError(f"{d}: not a dataset directory")
    ids = sorted(int(m.group(1)) for p in d.iterdir() if (m := _SCENE_RE.match(p.name)))
    out = []
    for i in ids:
        box_path = d / f"scene_{i}.boxes.csv"
        if not box_path.exists():
            raise ParseError(f"{box_path}: missing box file for scene {i}")
        out.append(SceneSample(read_grid(d / f"scene_{i}.grid"), read_boxes(box_path), i))
    return out
