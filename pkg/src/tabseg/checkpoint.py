"""Binary checkpoint files: model config, parameters, Adam state, selection info.

Layout (all integers little-endian)::

    "TABSCKPT" | u32 version | u32 len + UTF-8 JSON config
    | u32 count | count x tensor
    | u32 step | f64 lr, weight_decay, beta1, beta2, eps | u32 count | count x tensor
    | u32 epoch | f64 best_validation_loss

    tensor := u32 name_len | UTF-8 name | u32 rank | u32 extents[rank] | f32 data (row-major)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import atomic_write_bytes
from .errors import ConfigurationError, DataError, FormatError
from .models import ModelConfig, SegmentationNet, build_model
from .optim import AdamState

MAGIC = b"TABSCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    best_validation_loss: float = float("inf")

    @classmethod
    def from_model(cls, model: SegmentationNet, adam: AdamState, epoch: int,
                   best_validation_loss: float) -> "Checkpoint":
        params = {k: p.data.astype(np.float32) for k, p in model.parameters().items()}
        state = AdamState(adam.learning_rate, adam.weight_decay, adam.beta1, adam.beta2, adam.eps,
                          adam.step_count,
                          {k: v.astype(np.float32) for k, v in adam.m.items()},
                          {k: v.astype(np.float32) for k, v in adam.v.items()})
        return cls(model.config, params, state, epoch, float(best_validation_loss))

    def build(self) -> SegmentationNet:
        """Instantiate the model and load these parameters into it."""
        model = build_model(self.config)
        load_parameters(model, self.params)
        return model


def load_parameters(model: SegmentationNet, params: dict[str, np.ndarray]) -> None:
    target = model.parameters()
    missing, extra = set(target) - set(params), set(params) - set(target)
    if missing or extra:
        raise ConfigurationError(
            f"checkpoint/model mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}"
        )
    for name, p in target.items():
        if params[name].shape != p.shape:
            raise ConfigurationError(f"{name}: shape {params[name].shape} != model {p.shape}")
        p.data = params[name].astype(p.dtype, copy=True)


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.asarray(arr, dtype="<f4")
    return (struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
            + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes(order="C"))


def encode_checkpoint(ck: Checkpoint) -> bytes:
    cfg = json.dumps(ck.config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg)), cfg,
           struct.pack("<I", len(ck.params))]
    out += [_pack_tensor(k, v) for k, v in ck.params.items()]
    a = ck.adam
    moments = [(f"m/{k}", v) for k, v in a.m.items()] + [(f"v/{k}", v) for k, v in a.v.items()]
    out.append(struct.pack("<I5d", a.step_count, a.learning_rate, a.weight_decay,
                           a.beta1, a.beta2, a.eps))
    out.append(struct.pack("<I", len(moments)))
    out += [_pack_tensor(k, v) for k, v in moments]
    out.append(struct.pack("<Id", ck.epoch, ck.best_validation_loss))
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes, where: str):
        self.buf, self.pos, self.where = buf, 0, where

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"{self.where}: truncated {what} at offset {self.pos}: need {n} bytes, "
                f"{len(self.buf) - self.pos} left"
            )
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))

    def tensor(self) -> tuple[str, np.ndarray]:
        (n,) = self.unpack("<I", "name length")
        name = self.take(n, "tensor name").decode("utf-8")
        (rank,) = self.unpack("<I", f"rank of {name}")
        if rank > 8:
            raise FormatError(f"{self.where}: implausible rank {rank} for {name} at offset {self.pos - 4}")
        shape = self.unpack(f"<{rank}I", f"extents of {name}")
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(self.take(4 * count, f"data of {name}"), dtype="<f4")
        return name, data.reshape(shape).astype(np.float32)


def decode_checkpoint(buf: bytes, where: str = "<bytes>") -> Checkpoint:
    r = _Reader(buf, where)
    if r.take(8, "magic") != MAGIC:
        raise FormatError(f"{where}: bad magic at offset 0 (expected {MAGIC!r})")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"{where}: unsupported version {version} at offset 8")
    (n,) = r.unpack("<I", "config length")
    try:
        config = ModelConfig.from_dict(json.loads(r.take(n, "config").decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{where}: unreadable model config at offset 16") from exc
    (count,) = r.unpack("<I", "manifest count")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name, arr = r.tensor()
        if name in params:
            raise FormatError(f"{where}: duplicate parameter {name!r}")
        params[name] = arr
    step, lr, wd, b1, b2, eps = r.unpack("<I5d", "optimizer header")
    (count,) = r.unpack("<I", "optimizer count")
    state = AdamState(lr, wd, b1, b2, eps, step)
    for _ in range(count):
        name, arr = r.tensor()
        kind, _, pname = name.partition("/")
        if kind not in ("m", "v") or pname not in params:
            raise FormatError(f"{where}: unexpected optimizer entry {name!r}")
        getattr(state, kind)[pname] = arr
    epoch, best = r.unpack("<Id", "selection record")
    if r.pos != len(buf):
        raise FormatError(f"{where}: {len(buf) - r.pos} trailing bytes at offset {r.pos}")
    return Checkpoint(config.validate(), params, state, epoch, best)


def save_checkpoint(ck: Checkpoint, path) -> None:
    atomic_write_bytes(path, encode_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except FileNotFoundError as exc:
        raise DataError(f"{path}: checkpoint not found") from exc
    return decode_checkpoint(buf, str(path))
