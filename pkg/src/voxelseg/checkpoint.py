"""Bit-exact binary container for named model parameters.

Layout: 4-byte magic "VNCK", little-endian u32 version, little-endian u64
manifest length, UTF-8 JSON manifest, then the raw blob region. The
manifest lists each tensor's name, shape, dtype and its byte offset/length
relative to the blob region, plus an arbitrary JSON config payload.
Everything is float64 little-endian row-major, so save/load round-trips
reproduce parameters bit for bit.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import BadMagic, ManifestCorrupt, VersionMismatch

MAGIC = b"VNCK"
VERSION = 1
_HEAD = struct.Struct("<4sIQ")


def encode(params: dict[str, np.ndarray], config: dict) -> bytes:
    """Serialize an ordered name -> array mapping plus a config dict."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        blob = arr.astype("<f8").tobytes(order="C")
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "f64", "offset": offset, "length": len(blob)}
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"config": config, "tensors": entries}, sort_keys=True).encode("utf-8")
    return _HEAD.pack(MAGIC, VERSION, len(manifest)) + manifest + b"".join(blobs)


def decode(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    """Parse container bytes back into (params, config), validating layout."""
    if len(data) < _HEAD.size or data[:4] != MAGIC:
        raise BadMagic("not a VNCK checkpoint")
    magic, version, manifest_len = _HEAD.unpack_from(data)
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    manifest_end = _HEAD.size + manifest_len
    if manifest_end > len(data):
        raise ManifestCorrupt("manifest extends past end of file")
    try:
        manifest = json.loads(data[_HEAD.size:manifest_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestCorrupt(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or "tensors" not in manifest or "config" not in manifest:
        raise ManifestCorrupt("manifest missing 'config' or 'tensors'")

    blob_region = data[manifest_end:]
    params: dict[str, np.ndarray] = {}
    spans = []
    for entry in manifest["tensors"]:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
            length = int(entry["length"])
            dtype = entry["dtype"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestCorrupt(f"malformed tensor entry {entry!r}") from exc
        if dtype != "f64":
            raise ManifestCorrupt(f"unsupported tensor dtype {dtype!r}")
        if name in params:
            raise ManifestCorrupt(f"duplicate tensor name {name!r}")
        expected = int(np.prod(shape, dtype=np.int64)) * 8
        if length != expected:
            raise ManifestCorrupt(f"tensor {name!r}: length {length} != shape {shape} x 8 bytes")
        if offset < 0 or offset + length > len(blob_region):
            raise ManifestCorrupt(f"tensor {name!r}: blob region truncated")
        spans.append((offset, offset + length, name))
        params[name] = np.frombuffer(blob_region, dtype="<f8", count=length // 8, offset=offset).reshape(shape).astype(np.float64)

    spans.sort()
    for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise ManifestCorrupt(f"tensors {name_a!r} and {name_b!r} overlap in the blob region")

    return params, manifest["config"]
