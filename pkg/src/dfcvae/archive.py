"""Byte-reproducible safetensors writing.

safetensors serializes the metadata map in hash order, so two saves of the
same content can differ byte for byte. :func:`save_archive` re-emits the
JSON header with sorted keys; tensor data is untouched.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Dict, Mapping, Optional


def canonical_bytes(raw: bytes) -> bytes:
    n = struct.unpack("<Q", raw[:8])[0]
    header = json.loads(raw[8:8 + n])
    body = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body += b" " * (-len(body) % 8)
    return struct.pack("<Q", len(body)) + body + raw[8 + n:]


def save_archive(tensors: Mapping, path: str, metadata: Optional[Dict[str, str]] = None) -> None:
    """Write torch or numpy ``tensors`` atomically (temp file + rename)."""
    values = list(tensors.values())
    if values and type(values[0]).__module__.startswith("numpy"):
        from safetensors.numpy import save
    else:
        from safetensors.torch import save
    raw = save(dict(tensors), metadata=dict(metadata) if metadata else None)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(canonical_bytes(raw))
    os.replace(tmp, path)
