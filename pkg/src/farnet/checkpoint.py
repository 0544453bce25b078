"""Binary checkpoint format.

Layout, all integers little-endian:

    magic "FARN" | format_version u32 | config length u64 | config utf-8
    param count u32
    per parameter: name length u16 | name utf-8 | ndim u8 | dims u32...
                   | row-major float64 data
    optimizer step count u64
    per parameter (same order): first-moment data | second-moment data
    epoch u32 | rng seed u64 | rng stream u64 | rng counter u64

Saving the result of a load reproduces the original file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["CheckpointError", "CheckpointState", "save_checkpoint", "load_checkpoint"]

MAGIC = b"FARN"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Unreadable, corrupt, or version-incompatible checkpoint."""


@dataclass
class CheckpointState:
    config_text: str
    params: dict[str, np.ndarray]           # name -> float64 array, ordered
    opt_step: int
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    epoch: int
    rng_state: tuple[int, int, int]


def save_checkpoint(path: Path, state: CheckpointState) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    cfg = state.config_text.encode("utf-8")
    out += struct.pack("<Q", len(cfg))
    out += cfg
    names = list(state.params)
    out += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(state.params[name], dtype="<f8")
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<I", dim)
        out += arr.tobytes()
    out += struct.pack("<Q", state.opt_step)
    for name in names:
        out += np.ascontiguousarray(state.opt_m[name], dtype="<f8").tobytes()
        out += np.ascontiguousarray(state.opt_v[name], dtype="<f8").tobytes()
    out += struct.pack("<I", state.epoch)
    out += struct.pack("<QQQ", *state.rng_state)
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint: {self.path}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Path) -> CheckpointState:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"bad magic bytes in {path}")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format_version {version} unsupported "
            f"(this build reads {FORMAT_VERSION})"
        )
    (cfg_len,) = r.unpack("<Q")
    config_text = r.take(cfg_len).decode("utf-8")
    (count,) = r.unpack("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = tuple(r.unpack(f"<{ndim}I")) if ndim else ()
        n_items = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(8 * n_items), dtype="<f8").reshape(shape)
        params[name] = data.astype(np.float64)
    (opt_step,) = r.unpack("<Q")
    opt_m: dict[str, np.ndarray] = {}
    opt_v: dict[str, np.ndarray] = {}
    for name, arr in params.items():
        opt_m[name] = np.frombuffer(r.take(8 * arr.size), dtype="<f8").reshape(arr.shape).astype(np.float64)
        opt_v[name] = np.frombuffer(r.take(8 * arr.size), dtype="<f8").reshape(arr.shape).astype(np.float64)
    (epoch,) = r.unpack("<I")
    rng_state = r.unpack("<QQQ")
    if r.pos != len(r.blob):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return CheckpointState(
        config_text=config_text,
        params=params,
        opt_step=opt_step,
        opt_m=opt_m,
        opt_v=opt_v,
        epoch=epoch,
        rng_state=tuple(int(x) for x in rng_state),
    )
