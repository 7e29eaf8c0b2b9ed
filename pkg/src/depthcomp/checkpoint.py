"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"3DDN1"
    u32 config length, config JSON (UTF-8, sorted keys)
    u32 entry count
    per entry: u16 name length, name (UTF-8), u8 ndim, ndim x u32 extents,
               prod(extents) x f64 values

Entries cover both networks' parameters and each optimizer's first/second
moments and step count, so a reloaded run is bit-identical to the saved one.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dcn import DcnConfig, init_concat_net, init_dcn
from .errors import FormatError, MagicError, MissingFileError, PayloadLengthError, ShapeError
from .lcn import LcnConfig, init_lcn
from .nn import ParamSet
from .training import AdamState, Model, TrainConfig, TrainResult, config_echo

MAGIC = b"3DDN1"


@dataclass
class Checkpoint:
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    config: dict = field(default_factory=dict)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    cfg = json.dumps(ckpt.config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(ckpt.entries))]
    for name, arr in ckpt.entries.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise PayloadLengthError(self.path, f"truncated while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes, path="<checkpoint>") -> Checkpoint:
    r = _Reader(data, path)
    if data[: len(MAGIC)] != MAGIC:
        raise MagicError(path, f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    r.pos = len(MAGIC)
    (n_cfg,) = r.unpack("<I", "config length")
    try:
        config = json.loads(r.take(n_cfg, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(path, f"unreadable config block: {e}") from None
    (count,) = r.unpack("<I", "entry count")
    entries = {}
    for _ in range(count):
        (n_name,) = r.unpack("<H", "entry name length")
        name = r.take(n_name, "entry name").decode("utf-8")
        (ndim,) = r.unpack("<B", f"rank of {name!r}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name!r}")
        n = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(r.take(8 * n, f"values of {name!r}"), dtype="<f8")
        entries[name] = values.astype(np.float64).reshape(shape)
    if r.pos != len(data):
        raise PayloadLengthError(path, f"{len(data) - r.pos} trailing bytes after last entry")
    return Checkpoint(entries, config)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(p, "checkpoint not found")
    return decode_checkpoint(p.read_bytes(), p)


# ---------------------------------------------------------------------------
# mapping to and from training results


def _put_params(entries: dict, prefix: str, ps: ParamSet) -> None:
    for name, t in ps.items():
        entries[f"{prefix}/{name}"] = t.data


def _put_adam(entries: dict, prefix: str, ps: ParamSet, state: AdamState) -> None:
    entries[f"{prefix}.t"] = np.array([float(state.t)])
    for name in ps:
        if name in state.m:
            entries[f"{prefix}.m/{name}"] = state.m[name]
            entries[f"{prefix}.v/{name}"] = state.v[name]


def checkpoint_from_result(result: TrainResult) -> Checkpoint:
    m = result.model
    entries: dict[str, np.ndarray] = {}
    _put_params(entries, "lcn", m.lcn.tensors)
    _put_params(entries, "net", m.net.tensors)
    _put_adam(entries, "adam.lcn", m.lcn.tensors, result.lcn_adam)
    _put_adam(entries, "adam.net", m.net.tensors, result.net_adam)
    return Checkpoint(entries, config_echo(result))


def load_params(ps: ParamSet, entries: dict, prefix: str, path="<checkpoint>") -> None:
    """Copy ``prefix/<name>`` entries into ``ps``, checking every shape."""
    for name, t in ps.items():
        key = f"{prefix}/{name}"
        if key not in entries:
            raise ShapeError(path, f"checkpoint has no tensor {key!r}")
        arr = entries[key]
        if arr.shape != t.shape:
            raise ShapeError(path, f"tensor {key!r} has shape {arr.shape}, model expects {t.shape}")
        t.data[...] = arr
    extra = [k for k in entries if k.startswith(prefix + "/") and k[len(prefix) + 1 :] not in ps]
    if extra:
        raise ShapeError(path, f"unexpected tensors for this config: {extra[:3]}")


def _load_adam(ps: ParamSet, entries: dict, prefix: str) -> AdamState:
    state = AdamState(t=int(entries.get(f"{prefix}.t", np.zeros(1))[0]))
    for name in ps:
        if f"{prefix}.m/{name}" in entries:
            state.m[name] = entries[f"{prefix}.m/{name}"].copy()
            state.v[name] = entries[f"{prefix}.v/{name}"].copy()
    return state


def result_from_checkpoint(ckpt: Checkpoint, path="<checkpoint>") -> TrainResult:
    cfg = ckpt.config
    try:
        train = TrainConfig(**cfg["train"])
        lcn_cfg = LcnConfig.from_dict(cfg["lcn"])
        dcn_cfg = DcnConfig.from_dict(cfg["dcn"])
        kind = cfg["net_kind"]
        variant = cfg["variant"]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(path, f"incomplete config echo: {e}") from None
    lcn = init_lcn(lcn_cfg, 0)
    net = init_dcn(dcn_cfg, 0) if kind == "dual" else init_concat_net(dcn_cfg, 0, cfg["net_in_channels"][0])
    load_params(lcn.tensors, ckpt.entries, "lcn", path)
    load_params(net.tensors, ckpt.entries, "net", path)
    return TrainResult(
        Model(variant, lcn, net, train.max_depth),
        train,
        _load_adam(lcn.tensors, ckpt.entries, "adam.lcn"),
        _load_adam(net.tensors, ckpt.entries, "adam.net"),
        [],
    )
