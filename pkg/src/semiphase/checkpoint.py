"""Single-file tensor archive.

Layout: 8-byte magic, uint64 little-endian header length, a UTF-8 JSON header
(configs, scalar state, tensor manifest with name/shape/byte offset), then the
raw payload of all tensors as little-endian float32 in manifest order.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .errors import DataError

MAGIC = b"SEMIPHS1"
FORMAT_VERSION = 1


def _to_f4(value) -> np.ndarray:
    if torch.is_tensor(value):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value, dtype="<f4")
    # note: ascontiguousarray would promote 0-d scalars to 1-d
    return arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)


def save_archive(path, tensors: dict, configs: dict | None = None, state: dict | None = None) -> None:
    """Write named tensors plus JSON configs/state to one archive file."""
    arrays = OrderedDict((name, _to_f4(val)) for name, val in tensors.items())
    manifest, offset = [], 0
    for name, arr in arrays.items():
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = json.dumps(
        {
            "format_version": FORMAT_VERSION,
            "configs": configs or {},
            "state": state or {},
            "tensors": manifest,
        }
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in arrays.values():
            fh.write(arr.tobytes())


def load_archive(path):
    """Read an archive; returns (configs, state, OrderedDict name -> float32 array)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: not a semiphase archive (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt manifest ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: format version {header.get('format_version')} != {FORMAT_VERSION}"
        )
    payload = blob[16 + header_len :]
    tensors = OrderedDict()
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise DataError(f"{path}: truncated payload for tensor {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()
    return header["configs"], header["state"], tensors
