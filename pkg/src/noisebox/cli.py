"""Command-line entry point: gen-data, train, eval, sample, gradcheck, bench.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from .numerics import ConfigError, FormatError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DETECTION_HEADER = ["image_id", "class", "score", "cx", "cy", "w", "h"]

log = logging.getLogger("noisebox")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def parse_seeds(text: str) -> list[int]:
    """``a..b`` (b excluded) or a comma list of integers."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi <= lo:
                raise ValueError
            return list(range(lo, hi))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad seed range {text!r}; use a..b or a,b,c") from None


# output helpers ----------------------------------------------------------

def detections_csv(image_ids, boxsets) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DETECTION_HEADER)
    for img, bs in zip(image_ids, boxsets):
        for lab, sc, b in zip(bs.labels, bs.scores, bs.boxes):
            w.writerow([img, int(lab), repr(float(sc))] + [repr(float(v)) for v in b])
    return buf.getvalue()


def overlay_pgm(image: np.ndarray, boxes: np.ndarray) -> bytes:
    """Binary P5 graymap of the image with box outlines at 255."""
    img = np.asarray(image, dtype=np.float64).reshape(image.shape[-2:])
    H, W = img.shape
    hi = float(np.percentile(img, 99.5)) or 1.0
    gray = np.clip(img / hi * 254.0, 0, 254).astype(np.uint8)
    for cx, cy, w, h in np.asarray(boxes, dtype=np.float64).reshape(-1, 4):
        x0 = int(np.clip(np.floor((cx - w / 2) * W), 0, W - 1))
        x1 = int(np.clip(np.ceil((cx + w / 2) * W) - 1, 0, W - 1))
        y0 = int(np.clip(np.floor((cy - h / 2) * H), 0, H - 1))
        y1 = int(np.clip(np.ceil((cy + h / 2) * H) - 1, 0, H - 1))
        gray[y0, x0:x1 + 1] = gray[y1, x0:x1 + 1] = 255
        gray[y0:y1 + 1, x0] = gray[y0:y1 + 1, x1] = 255
    return f"P5\n{W} {H}\n255\n".encode() + gray.tobytes()


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


# subcommands -------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .synthdata import write_dataset
    seeds = parse_seeds(args.seeds)
    write_dataset(args.out, [args.seed + s for s in seeds], args.size, args.size, args.classes)
    print(f"wrote {len(seeds)} scenes to {args.out}")
    return EXIT_OK


def _load_cfg(path):
    from .config import DetectorConfig, load_config
    if path is None:
        return DetectorConfig(), {}
    return load_config(path)


def _require(paths: dict, key: str, source) -> str:
    if not paths.get(key):
        raise ConfigError(f"{source or 'config'}: missing required key '{key}'")
    return paths[key]


def cmd_train(args) -> int:
    from .model import Detector, train
    from .synthdata import read_dataset
    cfg, paths = _load_cfg(args.config)
    data_dir = _require(paths, "dataset", args.config)
    ckpt = paths.get("checkpoint") or "checkpoint"
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.steps is not None:
        cfg = cfg.replace(train_steps=args.steps)
    scenes = read_dataset(data_dir)
    if not scenes:
        raise ConfigError(f"dataset {data_dir} contains no scenes")
    model = Detector(cfg)
    log_path = paths.get("log") or str(Path(ckpt) / "train_log.csv")
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    res = train(model, scenes, log_path=log_path)
    model.save(ckpt)
    print(f"trained {res.steps} steps in {res.seconds:.1f}s, last loss {res.last_loss:.4f}; "
          f"checkpoint {ckpt}")
    return EXIT_OK


def _model_from(args):
    from .model import Detector
    cfg, paths = _load_cfg(getattr(args, "config", None))
    ckpt = args.checkpoint or paths.get("checkpoint")
    if ckpt and Path(ckpt, "manifest.json").exists():
        return Detector.load(ckpt), paths
    if args.checkpoint:
        raise ConfigError(f"checkpoint {args.checkpoint} not found")
    log.warning("no checkpoint given; using an untrained model")
    return Detector(cfg), paths


def _sampler_kw(args) -> dict:
    kw = {}
    if getattr(args, "steps", None):
        kw["steps"] = tuple(int(s) for s in args.steps.split(","))
    return kw


_POOL_STATE: dict = {}


def _detect_one(i):
    from .diffusion import sample
    model, scenes, seed, kw = (_POOL_STATE[k] for k in ("model", "scenes", "seed", "kw"))
    s = scenes[i]
    rng = np.random.default_rng([seed, s.seed])
    return sample(model, s.image, model.schedule, rng, model.sampler_config(**kw))


def _detect_all(model, scenes, seed: int, kw: dict, workers: int):
    _POOL_STATE.update(model=model, scenes=scenes, seed=seed, kw=kw)
    idx = range(len(scenes))
    if workers <= 1:
        return [_detect_one(i) for i in idx]
    import multiprocessing as mp
    with mp.get_context("fork").Pool(workers) as pool:
        return pool.map(_detect_one, idx)


def cmd_eval(args) -> int:
    from .evalkit import Detections, GroundTruth, metrics_csv, metrics_table
    from .synthdata import read_dataset
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    model, paths = _model_from(args)
    data_dir = args.dataset or paths.get("test_dataset") or paths.get("dataset")
    if not data_dir:
        raise ConfigError("missing required key 'dataset' (pass --dataset)")
    out = Path(args.out or paths.get("out") or "eval_out")
    scenes = read_dataset(data_dir)
    dets = _detect_all(model, scenes, args.seed, _sampler_kw(args), args.workers)
    conf = model.cfg.conf if args.conf is None else args.conf
    rows = metrics_table([Detections(d.boxes, d.scores, d.labels) for d in dets],
                         [GroundTruth(s.gt.boxes, s.gt.labels) for s in scenes],
                         model.cfg.classes, conf)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(rows))
    (out / "detections.csv").write_text(detections_csv([s.seed for s in scenes], dets))
    ov = out / "overlays"
    ov.mkdir(exist_ok=True)
    for s, d in zip(scenes, dets):
        (ov / f"scene_{s.seed}.pgm").write_bytes(overlay_pgm(s.image, d.boxes[d.scores >= conf]))
    allrow = rows[-1]
    print(f"AP50 {allrow['AP50']:.4f}  AP75 {allrow['AP75']:.4f}  P {allrow['P']:.4f}  "
          f"R {allrow['R']:.4f}  F1 {allrow['F1']:.4f}  ({len(scenes)} scenes, out {out})")
    return EXIT_OK


def cmd_sample(args) -> int:
    from .synthdata import gen_scene, read_grid
    model, _ = _model_from(args)
    if args.grid:
        image = read_grid(args.grid)
        image_id = Path(args.grid).name.split(".")[0]
    else:
        size = model.cfg.image_size
        image = gen_scene(args.scene, size, size, model.cfg.classes).image
        image_id = f"scene_{args.scene}"
    det = model.detect(image, args.seed, **_sampler_kw(args))
    _write_text(args.out, detections_csv([image_id], [det]))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import CHECKS, run_suite
    names = args.only.split(",") if args.only else None
    unknown = [n for n in names or [] if n not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown checks {unknown}; known: {', '.join(CHECKS)}")
    results = run_suite(args.seed, names)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:24s} max_err={r.report.max_error:.2e}  "
              f"({r.seconds:.2f}s)")
        if not r.ok or args.verbose:
            print(r.report)
    bad = [r.name for r in results if not r.ok]
    print(f"{len(results) - len(bad)}/{len(results)} gradient checks passed")
    return EXIT_OK if not bad else EXIT_RUNTIME


def cmd_bench(args) -> int:
    from .bench import rows_csv, run, scaling_ratios
    rows = run(args.what, args.backend, args.repeats, args.seed)
    _write_text(args.out, rows_csv(rows))
    ratios = scaling_ratios(rows)
    for v, r in ratios.items():
        print(f"{v} attention wall(4096)/wall(1024) = {r:.2f}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="noisebox", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seeds", default="0..10", help="scene ids, a..b (b excluded) or a,b,c")
    g.add_argument("--size", type=int, default=128)
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--seed", type=int, default=0, help="offset added to every scene id")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a detector from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="metrics CSV, detections CSV and overlays for a dataset")
    e.add_argument("--config")
    e.add_argument("--checkpoint")
    e.add_argument("--dataset")
    e.add_argument("--out")
    e.add_argument("--steps", help="sampling steps, e.g. 1000,500")
    e.add_argument("--conf", type=float)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sample", help="detect boxes in one scene")
    s.add_argument("--config")
    s.add_argument("--checkpoint")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--grid", help="scene grid file")
    src.add_argument("--scene", type=int, default=0, help="generate this scene id")
    s.add_argument("--steps")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_sample)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    c.add_argument("--only", help="comma list of check names")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_gradcheck)

    b = sub.add_parser("bench", help="scan and attention timings as CSV")
    b.add_argument("--what", choices=("all", "scan", "attention"), default="all")
    b.add_argument("--backend", choices=("compiled", "python"))
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--out", help="CSV path (default stdout)")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    from .synthdata import ParseError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, ParseError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
