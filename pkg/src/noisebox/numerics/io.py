"""Binary tensor container ("MDK1") and checkpoint directories."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MDK1"


class FormatError(ValueError):
    pass


def dumps_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def loads_tensor(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {buf[:4]!r}")
    if len(buf) < 8:
        raise FormatError(f"{source}: truncated header at byte {len(buf)}")
    (rank,) = struct.unpack_from("<I", buf, 4)
    end = 8 + 4 * rank
    if len(buf) < end:
        raise FormatError(f"{source}: truncated shape at byte {len(buf)}")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(shape)) if rank else 1
    need = end + 8 * count
    if len(buf) != need:
        raise FormatError(f"{source}: expected {need} bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype="<f8", offset=end, count=count).reshape(shape).astype(np.float64)


def save_tensor(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(dumps_tensor(arr))


def load_tensor(path) -> np.ndarray:
    p = Path(path)
    return loads_tensor(p.read_bytes(), str(p))


def save_checkpoint(directory, state: dict[str, np.ndarray], extra_files: dict[str, str] | None = None) -> None:
    """One ``<name>.mdk`` per tensor plus ``manifest.json`` mapping name -> shape."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name, arr in state.items():
        save_tensor(d / f"{name}.mdk", arr)
        manifest[name] = list(arr.shape)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    for fname, text in (extra_files or {}).items():
        (d / fname).write_text(text)


def load_checkpoint(directory) -> dict[str, np.ndarray]:
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FormatError(f"{d}: no manifest.json")
    manifest = json.loads(mpath.read_text())
    state = {}
    for name, shape in manifest.items():
        arr = load_tensor(d / f"{name}.mdk")
        if list(arr.shape) != list(shape):
            raise FormatError(f"{name}: file shape {list(arr.shape)} != manifest {shape}")
        state[name] = arr
    return state
