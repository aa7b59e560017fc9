"""Binary named-tensor container.

One format serves model checkpoints (role "student"/"teacher") and cached
log-mel clips (role "melclip"). Byte layout is documented in
docs/checkpoint.md; a trailing CRC-32 catches payload corruption.
"""

from __future__ import annotations

import struct
import zlib
from typing import Dict, Tuple

import numpy as np

from .errors import CheckpointError

MAGIC = b"FDYS"
VERSION = 1


def save_container(path, role: str, config_text: str, tensors: Dict[str, np.ndarray]) -> None:
    """Write named float32 tensors with a role tag and free-form config text."""
    parts = [MAGIC, struct.pack("<I", VERSION)]
    role_b = role.encode("utf-8")
    cfg_b = config_text.encode("utf-8")
    parts.append(struct.pack("<H", len(role_b)))
    parts.append(role_b)
    parts.append(struct.pack("<I", len(cfg_b)))
    parts.append(cfg_b)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        name_b = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.tobytes())
    blob = b"".join(parts)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated payload "
                                  f"(wanted {n} bytes at offset {self.pos})")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))


def load_container(path) -> Tuple[str, str, Dict[str, np.ndarray]]:
    """Read a container back; returns (role, config_text, tensors)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise CheckpointError(f"{path}: file too small to be a checkpoint")
    body, crc_stored = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CheckpointError(f"{path}: CRC mismatch, payload is corrupt")
    r = _Reader(body, path)
    if r.read(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a {MAGIC.decode()} container")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version} "
                              f"(this build reads {VERSION})")
    (role_len,) = r.unpack("<H")
    role = r.read(role_len).decode("utf-8")
    (cfg_len,) = r.unpack("<I")
    config_text = r.read(cfg_len).decode("utf-8")
    (count,) = r.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.read(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        n_items = int(np.prod(shape)) if shape else 1
        payload = r.read(4 * n_items)
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if r.pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - r.pos} trailing bytes after tensors")
    return role, config_text, tensors
