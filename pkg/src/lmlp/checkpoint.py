"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"LMLP"
    version u32      currently 1
    config  u32 length + UTF-8 run-config text
    step    u64      training step the snapshot was taken at
    params  u32 count, then per parameter:
              u32 name length + name bytes
              u32 rank + u32 extents
              float32 data, little-endian
    opt     u8 flag; when 1: u64 moment-update count, then for every
            parameter in order: float32 first-moment data, float32
            second-moment data (shapes match the parameter)

Parameters are stored as 32-bit floats, so checkpointed models are built
with dtype float32 and round-trip bitwise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import UlMlpModel, build_model
from .config import RunConfig, parse_config, serialize_config
from .optim import AdamW
from .tensor import UsageError

MAGIC = b"LMLP"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass
class Checkpoint:
    config: RunConfig
    step: int
    params: dict[str, np.ndarray]
    opt_step: int | None
    opt_exp_avg: list[np.ndarray] | None
    opt_exp_avg_sq: list[np.ndarray] | None


def _write_array(chunks: list[bytes], arr: np.ndarray) -> None:
    chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(path, config: RunConfig, model: UlMlpModel, step: int,
                    optimizer: AdamW | None = None) -> None:
    if model.dtype != np.float32:
        raise UsageError("checkpoints store 32-bit values; build the model with float32")
    named = list(model.named_parameters())
    chunks: list[bytes] = [MAGIC, struct.pack("<I", VERSION)]
    config_bytes = serialize_config(config).encode()
    chunks.append(struct.pack("<I", len(config_bytes)))
    chunks.append(config_bytes)
    chunks.append(struct.pack("<Q", step))
    chunks.append(struct.pack("<I", len(named)))
    for name, param in named:
        name_bytes = name.encode()
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<I", param.ndim))
        chunks.append(struct.pack(f"<{param.ndim}I", *param.shape))
        _write_array(chunks, param.data)
    if optimizer is None:
        chunks.append(struct.pack("<B", 0))
    else:
        if optimizer.names != [name for name, _ in named]:
            raise UsageError("optimizer does not track the model's parameter list")
        chunks.append(struct.pack("<B", 1))
        opt_step, exp_avg, exp_avg_sq = optimizer.state_arrays()
        chunks.append(struct.pack("<Q", opt_step))
        for m, v in zip(exp_avg, exp_avg_sq):
            _write_array(chunks, m)
            _write_array(chunks, v)
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.raw):
            raise CheckpointError("truncated checkpoint")
        out = self.raw[self.pos:self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def array(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(self.take(4 * count), dtype="<f4")
        return data.reshape(shape).astype(np.float32)


def load_checkpoint(path) -> Checkpoint:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    version = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    config_len = reader.unpack("<I")
    config = parse_config(reader.take(config_len).decode())
    step = reader.unpack("<Q")
    count = reader.unpack("<I")
    params: dict[str, np.ndarray] = {}
    shapes: list[tuple[int, ...]] = []
    for _ in range(count):
        name_len = reader.unpack("<I")
        name = reader.take(name_len).decode()
        rank = reader.unpack("<I")
        if rank == 0:
            shape: tuple[int, ...] = ()
        elif rank == 1:
            shape = (reader.unpack("<I"),)
        else:
            shape = tuple(reader.unpack(f"<{rank}I"))
        params[name] = reader.array(shape)
        shapes.append(shape)
    has_opt = reader.unpack("<B")
    opt_step = opt_avg = opt_avg_sq = None
    if has_opt:
        opt_step = reader.unpack("<Q")
        opt_avg, opt_avg_sq = [], []
        for shape in shapes:
            opt_avg.append(reader.array(shape))
            opt_avg_sq.append(reader.array(shape))
    return Checkpoint(config, step, params, opt_step, opt_avg, opt_avg_sq)


def restore_model(snapshot: Checkpoint) -> UlMlpModel:
    """Rebuild the model from the embedded config and overwrite every parameter."""
    model = build_model(snapshot.config.backbone_config(), snapshot.config.seed,
                        dtype=np.float32)
    names = {name for name, _ in model.named_parameters()}
    if names != set(snapshot.params):
        missing = names.symmetric_difference(snapshot.params)
        raise CheckpointError(f"parameter names do not match the config: {sorted(missing)}")
    for name, param in model.named_parameters():
        stored = snapshot.params[name]
        if stored.shape != param.shape:
            raise CheckpointError(f"shape mismatch for {name}: {stored.shape} vs {param.shape}")
        param.data[...] = stored
    return model


def restore_optimizer(snapshot: Checkpoint, model: UlMlpModel, lr: float,
                      betas: tuple[float, float], weight_decay: float) -> AdamW:
    optimizer = AdamW(list(model.named_parameters()), lr=lr, betas=betas,
                      weight_decay=weight_decay)
    if snapshot.opt_step is not None:
        optimizer.load_state(snapshot.opt_step, snapshot.opt_exp_avg,
                             snapshot.opt_exp_avg_sq)
    return optimizer


__all__ = [
    "Checkpoint",
    "CheckpointError",
    "MAGIC",
    "VERSION",
    "load_checkpoint",
    "restore_model",
    "restore_optimizer",
    "save_checkpoint",
]
