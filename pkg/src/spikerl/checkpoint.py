"""Parameter checkpoints: JSON manifest followed by serialized tensors.

Layout: ``b"SPKRCKPT"``, manifest length (u32 LE), UTF-8 JSON manifest
``{"version": 1, "meta": {...}, "tensors": [{"name", "shape", "format"}]}``,
then one serialized tensor per manifest entry, in order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .numeric import Tensor, deserialize, serialize

MAGIC = b"SPKRCKPT"


def save(path, params: dict, meta: dict | None = None):
    names = sorted(params)
    tensors = [Tensor.from_array(params[k]) for k in names]
    manifest = {"version": 1, "meta": meta or {},
                "tensors": [{"name": k, "shape": list(t.shape), "format": t.format.name}
                            for k, t in zip(names, tensors)]}
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", len(blob)) + blob)
        for t in tensors:
            fh.write(serialize(t))


def load(path) -> tuple[dict, dict]:
    """Returns ``(params, meta)``."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path} is not a spikerl checkpoint")
    (n,) = struct.unpack_from("<I", buf, 8)
    manifest = json.loads(buf[12:12 + n])
    off = 12 + n
    params = {}
    for entry in manifest["tensors"]:
        t, off = deserialize(buf, off)
        if list(t.shape) != entry["shape"] or t.format.name != entry["format"]:
            raise ValueError(f"checkpoint entry {entry['name']} does not match its manifest")
        params[entry["name"]] = t.numpy()
    return params, manifest.get("meta", {})


def param_hash(params: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        a = np.ascontiguousarray(params[k])
        h.update(k.encode())
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()
