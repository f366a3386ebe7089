"""Flat, ordered, named parameter container for model weights.

File layout: an ASCII magic line, one JSON line describing metadata and the
ordered tensor table (name, dtype, shape), then the raw little-endian tensor
payloads concatenated in table order. Loading validates the magic, the table,
and the payload length; loading into a module additionally validates names
and shapes against the module's state dict.
"""

from __future__ import annotations

import json

import numpy as np
import torch

from .validation import FormatError, ValidationError

__all__ = ["save_weights", "load_weights", "load_state_into", "MAGIC"]

MAGIC = b"CTXREDRAW-WEIGHTS-1"

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int64": np.dtype("<i8"),
}


def _to_numpy(value) -> np.ndarray:
    if torch.is_tensor(value):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    if arr.dtype.name not in _DTYPES:
        raise ValidationError(f"unsupported tensor dtype {arr.dtype.name}")
    return np.ascontiguousarray(arr.astype(_DTYPES[arr.dtype.name], copy=False))


def save_weights(path, tensors, meta: dict | None = None) -> None:
    """Write named tensors (dict preserving order) plus JSON-able metadata."""
    arrays = [(str(name), _to_numpy(value)) for name, value in tensors.items()]
    table = [
        {"name": name, "dtype": str(arr.dtype.name), "shape": list(arr.shape)}
        for name, arr in arrays
    ]
    header = json.dumps({"meta": meta or {}, "tensors": table},
                        sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as f:
        f.write(MAGIC + b"\n")
        f.write(header.encode("utf-8") + b"\n")
        for _, arr in arrays:
            f.write(arr.tobytes())


def load_weights(path):
    """Read a weights file; returns (ordered name->array dict, metadata dict)."""
    with open(path, "rb") as f:
        magic = f.readline().rstrip(b"\n")
        if magic != MAGIC:
            raise FormatError(f"{path}: not a weights file (bad magic)")
        try:
            header = json.loads(f.readline().decode("utf-8"))
            table = header["tensors"]
            meta = header["meta"]
        except (ValueError, KeyError) as exc:
            raise FormatError(f"{path}: malformed weights header") from exc
        payload = f.read()

    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in table:
        try:
            name = entry["name"]
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(int(s) for s in entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed tensor table entry {entry!r}") from exc
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(payload):
            raise FormatError(f"{path}: truncated payload for tensor {name!r}")
        flat = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        tensors[name] = flat.reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing bytes after tensors")
    return tensors, meta


def load_state_into(module: torch.nn.Module, tensors) -> torch.nn.Module:
    """Copy named arrays into a module, validating names and shapes exactly."""
    state = module.state_dict()
    missing = sorted(set(state) - set(tensors))
    extra = sorted(set(tensors) - set(state))
    if missing or extra:
        raise ValidationError(
            f"weights do not match module: missing={missing}, unexpected={extra}"
        )
    converted = {}
    for name, param in state.items():
        arr = np.asarray(tensors[name])
        if tuple(arr.shape) != tuple(param.shape):
            raise ValidationError(
                f"weights[{name!r}]: shape {tuple(arr.shape)} != expected {tuple(param.shape)}"
            )
        converted[name] = torch.from_numpy(arr.copy()).to(param.dtype)
    module.load_state_dict(converted)
    return module
