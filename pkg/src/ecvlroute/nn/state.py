"""Router state container and its binary on-disk format.

Layout: magic "ECVLRTR1" | u32 format_version | payload | u32 CRC32(payload).
Payload: variant tag, config JSON (dims, variant parameters, mask, normalizer,
training history), scenario JSON, tau as f64, then named f32 parameter
tensors. Parameters are rounded to f32 in memory right before writing so a
saved-then-loaded state is bit-identical to the state that produced the file.
"""
from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..features import Normalizer
from ..rsd import ScenarioConfig
from .model import MfConfig, MlpConfig, RouterModel, TransformerConfig, VariantConfig

STATE_MAGIC = b"ECVLRTR1"
FORMAT_VERSION = 1

_CONFIG_CLASSES = {"transformer": TransformerConfig, "mlp": MlpConfig, "mf": MfConfig}


class StateError(ValueError):
    pass


@dataclass
class RouterState:
    model: RouterModel
    tau: float
    scenario: ScenarioConfig
    history: list = field(default_factory=list)
    normalizer: Normalizer | None = None
    mask: tuple[int, int, int] = (1, 1, 1)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if not (0.0 <= self.tau <= 1.0):
            raise StateError(f"tau out of [0,1]: {self.tau}")


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _pack_blob(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_state(state: RouterState, path):
    model = state.model
    # f32 rounding happens here, not at load, so in-memory and on-disk agree.
    for name in model.params:
        model.params[name] = model.params[name].astype(np.float32).astype(np.float64)

    cfg = state.model.config
    config_obj = {
        "variant_params": dataclasses.asdict(cfg),
        "k_text": model.k_text,
        "k_image": model.k_image,
        "seed": model.seed,
        "mask": list(state.mask),
        "normalizer": None if state.normalizer is None else {
            "mean": state.normalizer.mean.tolist(),
            "std": state.normalizer.std.tolist(),
        },
        "history": [dataclasses.asdict(h) if dataclasses.is_dataclass(h) else h
                    for h in state.history],
    }
    payload = bytearray()
    payload += _pack_str(cfg.variant)
    payload += _pack_blob(json.dumps(config_obj, sort_keys=True))
    payload += _pack_blob(json.dumps(dataclasses.asdict(state.scenario), sort_keys=True))
    payload += struct.pack("<d", state.tau)
    payload += struct.pack("<I", len(model.params))
    for name, arr in model.params.items():
        payload += _pack_str(name)
        payload += struct.pack("<I", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()

    with open(path, "wb") as f:
        f.write(STATE_MAGIC)
        f.write(struct.pack("<I", state.format_version))
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(bytes(payload))))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise StateError("truncated payload")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.u16()).decode("utf-8")

    def blob(self):
        return self.take(self.u32()).decode("utf-8")


def load_state(path) -> RouterState:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != STATE_MAGIC:
        raise StateError(f"{path}: bad magic {data[:8]!r}")
    if len(data) < 16:
        raise StateError(f"{path}: file too short")
    (version,) = struct.unpack("<I", data[8:12])
    if version != FORMAT_VERSION:
        raise StateError(f"{path}: unsupported format version {version}")
    payload, (crc_stored,) = data[12:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc_stored:
        raise StateError(f"{path}: checksum mismatch (corrupt or truncated file)")

    r = _Reader(payload)
    variant = r.string()
    if variant not in _CONFIG_CLASSES:
        raise StateError(f"{path}: unknown variant {variant!r}")
    config_obj = json.loads(r.blob())
    scen = json.loads(r.blob())
    (tau,) = struct.unpack("<d", r.take(8))

    vp = dict(config_obj["variant_params"])
    if variant == "mlp":
        vp["hidden"] = tuple(vp["hidden"])
    cfg = _CONFIG_CLASSES[variant](**vp)
    model = RouterModel(cfg, config_obj["k_text"], config_obj["k_image"],
                        seed=config_obj.get("seed", 0))
    n_tensors = r.u32()
    params = {}
    for _ in range(n_tensors):
        name = r.string()
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        params[name] = arr.astype(np.float64)
    model.load_params(params)

    norm = None
    if config_obj.get("normalizer"):
        norm = Normalizer(mean=np.asarray(config_obj["normalizer"]["mean"]),
                          std=np.asarray(config_obj["normalizer"]["std"]))
    return RouterState(
        model=model,
        tau=tau,
        scenario=ScenarioConfig(**scen),
        history=config_obj.get("history", []),
        normalizer=norm,
        mask=tuple(config_obj.get("mask", (1, 1, 1))),
        format_version=version,
    )
