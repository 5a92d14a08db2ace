"""Binary parameter container.

Layout: the 4 magic bytes ``SRB1``, an unsigned 64-bit little-endian length,
that many bytes of UTF-8 JSON manifest (model config plus name, shape and byte
offset of every tensor), then the tensors as little-endian float32 in
row-major order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from srb.errors import CheckpointError
from srb.model import ModelConfig, ModelParams, param_shapes
from srb.tensor import param

MAGIC = b"SRB1"
_LEN = struct.Struct("<Q")
_DTYPE = np.dtype("<f4")


def dumps(params: ModelParams, extra: dict | None = None) -> bytes:
    entries = []
    offset = 0
    chunks = []
    for name, t in params.items():
        data = np.ascontiguousarray(t.values, dtype=_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    manifest = {"config": params.config.to_dict(), "params": entries}
    if extra:
        manifest["extra"] = extra
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + _LEN.pack(len(head)) + head + b"".join(chunks)


def loads(blob: bytes, expect: ModelConfig | None = None) -> tuple[ModelParams, dict]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not an SRB1 checkpoint (bad magic bytes)")
    try:
        (n,) = _LEN.unpack_from(blob, 4)
        manifest = json.loads(blob[12:12 + n].decode("utf-8"))
        config = ModelConfig(**manifest["config"])
    except (struct.error, ValueError, TypeError, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from exc
    if expect is not None:
        _check_compatible(config, expect)
    body = memoryview(blob)[12 + n:]
    shapes = param_shapes(config)
    tensors = {}
    for entry in manifest["params"]:
        name, shape, off = entry["name"], tuple(entry["shape"]), entry["offset"]
        if shapes.get(name) != shape:
            raise CheckpointError(f"parameter {name!r} has shape {shape}, config implies {shapes.get(name)}")
        count = int(np.prod(shape))
        if off + 4 * count > len(body):
            raise CheckpointError(f"checkpoint truncated inside {name!r}")
        values = np.frombuffer(body, dtype=_DTYPE, count=count, offset=off).reshape(shape)
        tensors[name] = param(values.astype(np.float32), name=name)
    missing = set(shapes) - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)}")
    return ModelParams(config, tensors), manifest.get("extra", {})


def _check_compatible(found: ModelConfig, expect: ModelConfig) -> None:
    keys = ("vocab_size", "embed_dim", "hidden_dim", "encoder_layers", "decoder_layers", "gate_hidden_dim")
    bad = [k for k in keys if getattr(found, k) != getattr(expect, k)]
    if bad:
        detail = ", ".join(f"{k}: checkpoint {getattr(found, k)} vs config {getattr(expect, k)}" for k in bad)
        raise CheckpointError(f"checkpoint does not match configuration ({detail})")


def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> None:
    Path(path).write_bytes(dumps(params, extra))


def load_checkpoint(path, expect: ModelConfig | None = None) -> tuple[ModelParams, dict]:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {p}")
    return loads(p.read_bytes(), expect)
