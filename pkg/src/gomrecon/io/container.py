"""Binary tensor container.

Layout: ``b"LGOM"``, u32 format version, u32 manifest byte length, the UTF-8
JSON manifest (a list of ``{name, dtype, shape}``), then the payload. Every
array starts on a 64-byte boundary and is stored little-endian as ``f32`` or
``i32``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LGOM"
VERSION = 1
ALIGN = 64
_DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}


class ContainerError(ValueError):
    pass


def _pad(n: int) -> int:
    return (-n) % ALIGN


def _storage(name: str, arr: np.ndarray) -> tuple[str, np.ndarray]:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        return "f32", arr.astype(_DTYPES["f32"])
    if arr.dtype.kind in "iub":
        info = np.iinfo(np.int32)
        if arr.size and (arr.min() < info.min or arr.max() > info.max):
            raise ContainerError(f"array {name!r} does not fit in i32")
        return "i32", arr.astype(_DTYPES["i32"])
    raise ContainerError(f"array {name!r} has unsupported dtype {arr.dtype}")


def encode_container(arrays: dict) -> bytes:
    manifest, blobs = [], []
    for name, arr in arrays.items():
        code, stored = _storage(name, arr)
        manifest.append({"name": name, "dtype": code, "shape": list(stored.shape)})
        blobs.append(np.ascontiguousarray(stored).tobytes())
    text = json.dumps(manifest, separators=(",", ":")).encode()
    head = MAGIC + struct.pack("<II", VERSION, len(text)) + text
    out = bytearray(head + b"\0" * _pad(len(head)))
    for b in blobs:
        out += b + b"\0" * _pad(len(b))
    return bytes(out)


def decode_container(buf: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise ContainerError(f"{source}: not a tensor container (bad magic)")
    version, mlen = struct.unpack("<II", buf[4:12])
    if version != VERSION:
        raise ContainerError(f"{source}: unsupported container version {version}")
    if 12 + mlen > len(buf):
        raise ContainerError(f"{source}: truncated manifest")
    try:
        manifest = json.loads(buf[12:12 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{source}: manifest is not valid JSON ({exc})") from None
    pos = 12 + mlen
    pos += _pad(pos)
    out: dict[str, np.ndarray] = {}
    for entry in manifest:
        name = entry.get("name")
        if name in out:
            raise ContainerError(f"{source}: duplicate array name {name!r}")
        dt = _DTYPES.get(entry.get("dtype"))
        if dt is None:
            raise ContainerError(f"{source}: array {name!r} has unknown dtype {entry.get('dtype')!r}")
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(buf):
            raise ContainerError(f"{source}: payload truncated in array {name!r}")
        out[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes + _pad(nbytes)
    return out


def write_container(path, arrays: dict) -> None:
    path = Path(path)
    names = list(arrays)
    if len(set(names)) != len(names):
        raise ContainerError(f"{path}: duplicate array names")
    data = encode_container(arrays)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def read_container(path) -> dict[str, np.ndarray]:
    path = Path(path)
    return decode_container(path.read_bytes(), str(path))


def pack_json(obj) -> np.ndarray:
    """Embed a JSON document as an i32 array of its UTF-8 bytes."""
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8).astype(np.int32)


def unpack_json(arr: np.ndarray):
    return json.loads(np.asarray(arr, dtype=np.uint8).tobytes().decode())
