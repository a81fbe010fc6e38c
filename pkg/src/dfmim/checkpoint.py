"""Binary model checkpoints.

Layout (little-endian)::

    b"DFMX" | u32 version | 32-byte SHA-256 of payload | u64 payload length | payload

The payload holds a JSON metadata block (config echo, training seed,
extras such as the label set) and the named float64 arrays, each with its
shape header, in model order followed by buffers.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autograd import parameter
from .errors import CorruptFile, ShapeError, VersionMismatch
from .model import DfmimConfig, DfmimModel, default_buffers, init_params

MAGIC = b"DFMX"
VERSION = 1
_HEAD = struct.Struct("<4sI32sQ")


def _pack_arrays(arrays: dict) -> bytes:
    parts = [struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)))
        parts.append(key)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def _unpack_arrays(buf: bytes, offset: int) -> dict:
    (count,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    out = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset : offset + klen].decode("utf-8")
        offset += klen
        (ndim,) = struct.unpack_from("<B", buf, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, offset)
        offset += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += 8 * n
        if name in out:
            raise CorruptFile(f"array {name!r} appears twice")
        out[name] = arr.astype(np.float64)
    if offset != len(buf):
        raise CorruptFile("trailing bytes after the last array")
    return out


def encode_checkpoint(model: DfmimModel, extra: dict | None = None) -> bytes:
    meta = {"config": model.config.to_dict(), "seed": model.config.seed, "extra": extra or {}}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload = struct.pack("<I", len(meta_bytes)) + meta_bytes + _pack_arrays(model.state())
    return _HEAD.pack(MAGIC, VERSION, hashlib.sha256(payload).digest(), len(payload)) + payload


def save_checkpoint(model: DfmimModel, path, extra: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(model, extra))


def decode_checkpoint(raw: bytes, expect: DfmimConfig | None = None):
    if len(raw) < _HEAD.size:
        raise CorruptFile("file shorter than the checkpoint header")
    magic, version, digest, length = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptFile("bad magic bytes, not a checkpoint")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, this build reads {VERSION}")
    payload = raw[_HEAD.size :]
    if len(payload) != length or hashlib.sha256(payload).digest() != digest:
        raise CorruptFile("checksum mismatch (truncated or modified checkpoint)")
    try:
        (mlen,) = struct.unpack_from("<I", payload, 0)
        meta = json.loads(payload[4 : 4 + mlen].decode("utf-8"))
        arrays = _unpack_arrays(payload, 4 + mlen)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"malformed payload: {exc}") from None
    config = DfmimConfig.from_dict(meta["config"])
    if expect is not None:
        _compare_shapes(expect, config)
    expected = _expected_shapes(config)
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise ShapeError(f"checkpoint arrays do not match config (missing {missing}, extra {extra})")
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise ShapeError(f"{name}: checkpoint shape {arrays[name].shape}, config needs {shape}")
    params = {
        name: parameter(arrays[name], name) for name in expected if not name.startswith("buffer.")
    }
    buffers = {name[7:]: arrays[name] for name in expected if name.startswith("buffer.")}
    return DfmimModel(config, params, buffers), meta.get("extra", {})


def load_checkpoint(path, expect: DfmimConfig | None = None):
    """Return ``(model, extra)``; ``expect`` guards against a different architecture."""
    raw = Path(path).read_bytes()
    return decode_checkpoint(raw, expect)


def _expected_shapes(config: DfmimConfig) -> dict:
    rng = np.random.default_rng(0)
    shapes = {k: v.shape for k, v in init_params(config, rng).items()}
    shapes.update({f"buffer.{k}": v.shape for k, v in default_buffers(config).items()})
    return shapes


def _compare_shapes(expect: DfmimConfig, got: DfmimConfig) -> None:
    a, b = _expected_shapes(expect), _expected_shapes(got)
    if a != b:
        diff = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
        raise ShapeError(f"checkpoint architecture differs from the expected config: {diff[:5]}")
