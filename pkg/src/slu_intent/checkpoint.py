"""Binary model container.

Layout (little-endian)::

    b"SLUM" | u32 version | u32 n | n bytes config (key = value text)
    | u32 n | n bytes metadata JSON
    | u32 count | count x (u32 name_len, name, u32 rank, rank x u32 dims, float32 values)
"""
from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, SLUNetwork

MAGIC = b"SLUM"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def serialize_model(net: SLUNetwork, metadata: dict | None = None) -> bytes:
    meta = dict(metadata or {})
    meta.setdefault("num_labels", [net.num_labels[s] for s in ("action", "object", "location")])
    buf = io.BytesIO()
    config = net.config.to_kv().encode("utf-8")
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(MAGIC + struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(config)) + config)
    buf.write(struct.pack("<I", len(meta_blob)) + meta_blob)
    state = net.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name in sorted(state):
        value = np.ascontiguousarray(state[name], dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)) + raw)
        buf.write(struct.pack("<I", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        buf.write(value.tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def deserialize_model(blob: bytes) -> tuple[dict, ModelConfig, dict]:
    """Return ``(state, config, metadata)``; raises before building anything if the blob is bad."""
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError("bad magic: not a model checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    config = ModelConfig.from_kv(r.take(r.u32()).decode("utf-8"))
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    state = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        state[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(blob):
        raise CheckpointFormatError("trailing bytes after checkpoint payload")
    return state, config, meta


def build_network(state: dict, config: ModelConfig, meta: dict) -> SLUNetwork:
    net = SLUNetwork(config, meta["num_labels"], seed=0, dtype=np.float32)
    net.load_state_dict(state)
    return net


def save_checkpoint(path, net: SLUNetwork, metadata: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(serialize_model(net, metadata))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[SLUNetwork, dict]:
    state, config, meta = deserialize_model(Path(path).read_bytes())
    return build_network(state, config, meta), meta
