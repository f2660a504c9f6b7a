"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"SPXCKPT\\0"  u32 version  32-byte config hash  u64 step  u32 count
    count x [ u32 name_len, name (utf-8), u32 ndim, ndim x u64 dims, float64 data ]
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import CheckpointError

MAGIC = b"SPXCKPT\0"
VERSION = 1


@dataclass
class Checkpoint:
    step: int
    config_hash: bytes
    tensors: dict = field(default_factory=dict)

    def to_bytes(self):
        parts = [MAGIC, struct.pack("<I", VERSION), self.config_hash, struct.pack("<QI", self.step, len(self.tensors))]
        for name, arr in self.tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)) + raw)
            parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            parts.append(arr.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf):
        view = memoryview(buf)
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(view):
                raise CheckpointError(f"truncated checkpoint at byte {pos}")
            out = view[pos:pos + n]
            pos += n
            return out

        if bytes(take(8)) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", take(4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        config_hash = bytes(take(32))
        step, count = struct.unpack("<QI", take(12))
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack("<I", take(4))
            name = bytes(take(n)).decode("utf-8")
            (ndim,) = struct.unpack("<I", take(4))
            shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
            tensors[name] = arr
        if pos != len(view):
            raise CheckpointError(f"{len(view) - pos} trailing bytes in checkpoint")
        return cls(step, config_hash, tensors)


def save(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(ckpt.to_bytes())


def load(path):
    with open(path, "rb") as fh:
        return Checkpoint.from_bytes(fh.read())


def capture(store, optimizer, step, cfg):
    tensors = {f"param/{k}": v.data for k, v in store.items()}
    for k in store:
        if k in optimizer.moments:
            m, v = optimizer.moments[k]
            tensors[f"adam_m/{k}"] = m
            tensors[f"adam_v/{k}"] = v
    return Checkpoint(step, cfg.hash(), tensors)


def restore(ckpt, store, optimizer, cfg):
    if ckpt.config_hash != cfg.hash():
        raise CheckpointError("checkpoint was written with a different configuration")
    state = {k[len("param/"):]: v for k, v in ckpt.tensors.items() if k.startswith("param/")}
    try:
        store.load_state(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not fit the model: {exc}") from None
    if optimizer is not None:
        optimizer.moments = {
            k: (ckpt.tensors[f"adam_m/{k}"].copy(), ckpt.tensors[f"adam_v/{k}"].copy())
            for k in store
            if f"adam_m/{k}" in ckpt.tensors
        }
        optimizer.t = ckpt.step
