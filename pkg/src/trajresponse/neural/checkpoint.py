"""Self-describing checkpoint container.

Layout: an 8-byte magic, an 8-byte little-endian header length, a JSON header
(manifest plus an array index with explicit shapes, dtypes and byte offsets),
then the raw little-endian array payload.  Serialization is fully
deterministic, so save -> load -> save reproduces identical bytes; the
manifest stores a sha256 of the payload which is verified on load.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .params import ParameterSet

MAGIC = b"TRRESP01"
_SUPPORTED_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


class CheckpointError(Exception):
    pass


def save_checkpoint(path: Path, manifest: dict, params: ParameterSet) -> None:
    """Write manifest + parameter arrays; overwrites any existing file."""
    names = params.names()
    index = []
    payload = bytearray()
    for name in names:
        a = np.ascontiguousarray(params.arrays[name])
        dtype = "<f8" if a.dtype == np.float64 else "<f4"
        raw = a.astype(_SUPPORTED_DTYPES[dtype], copy=False).tobytes()
        index.append({"name": name, "shape": list(a.shape), "dtype": dtype,
                      "offset": len(payload), "nbytes": len(raw)})
        payload.extend(raw)
    digest = hashlib.sha256(bytes(payload)).hexdigest()
    header = {"format_version": 1, "manifest": dict(manifest),
              "params_sha256": digest, "arrays": index}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(bytes(payload))


def load_checkpoint(path: Path) -> tuple[dict, ParameterSet]:
    """Read a checkpoint, verifying magic and payload hash."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + header_len].decode("utf-8"))
    if header.get("format_version") != 1:
        raise CheckpointError(f"{path}: unsupported format version")
    payload = data[16 + header_len:]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["params_sha256"]:
        raise CheckpointError(f"{path}: payload hash mismatch, file corrupt")
    arrays = {}
    for entry in header["arrays"]:
        dtype = _SUPPORTED_DTYPES[entry["dtype"]]
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
    return header["manifest"], ParameterSet(arrays)


def checkpoint_id(path: Path) -> str:
    """Short content hash identifying a checkpoint file."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
