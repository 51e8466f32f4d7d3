"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CDMT" | u32 version | u32 header_len | header (UTF-8 JSON) | tensor records

The JSON header holds the model config and free-form metadata.  Each tensor
record is ``u16 name_len | name | u8 ndim | u32 dims... | float32 data``.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"CDMT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(model_cfg: dict, tensors: dict[str, torch.Tensor], meta: dict | None = None) -> bytes:
    header = json.dumps({"model": model_cfg, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(header)))
    buf.write(header)
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy().astype("<f4", copy=False)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def loads(data: bytes) -> tuple[dict, dict, dict[str, torch.Tensor]]:
    """Return (model config dict, meta dict, tensors)."""
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic; not a CDMT checkpoint")
    if len(data) < 12 or struct.unpack_from("<I", data, 4)[0] != VERSION:
        raise CheckpointError("unsupported checkpoint version or truncated header")
    try:
        return _parse(data)
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None


def _parse(data: bytes):
    (hlen,) = struct.unpack_from("<I", data, 8)
    off = 12
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    tensors = {}
    while off < len(data):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    return header["model"], header["meta"], tensors


def save(path, model_cfg: dict, tensors: dict[str, torch.Tensor], meta: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(model_cfg, tensors, meta))
    tmp.replace(path)


def load(path) -> tuple[dict, dict, dict[str, torch.Tensor]]:
    return loads(Path(path).read_bytes())


def load_params_into(model: torch.nn.Module, tensors: dict[str, torch.Tensor]) -> None:
    """Copy the named parameter tensors into ``model``, validating every shape."""
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(tensors))
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing}")
    with torch.no_grad():
        for name, p in params.items():
            src = tensors[name]
            if tuple(src.shape) != tuple(p.shape):
                raise CheckpointError(f"{name}: shape {tuple(src.shape)} != expected {tuple(p.shape)}")
            p.copy_(src.to(p.dtype))
