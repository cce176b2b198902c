"""Binary checkpoint format.

Layout (all integers little-endian):
    magic   4 bytes  b"WLM1"
    version u32      currently 1
    hlen    u32      length of canonical-JSON header (sorted keys, no spaces)
    header  hlen bytes, utf-8 JSON
    count   u32      number of tensors
    then per tensor, in ascending name order:
        nlen  u16, name utf-8
        ndim  u8, dims u32 each
        data  float32 little-endian, C order

The header carries the model config, the vocab content hash, and a "kind"
tag ("encoder" or "slu"). Writing the same state twice produces identical
bytes, and a save/load/save round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import EncoderModel, ModelConfig

CHECKPOINT_MAGIC = b"WLM1"
CHECKPOINT_VERSION = 1


def _canon_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, header: dict, params: dict[str, np.ndarray]) -> None:
    hbytes = _canon_json(header)
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<I", len(hbytes)),
        hbytes,
        struct.pack("<I", len(params)),
    ]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {buf[:4]!r}")
    off = 4
    (version,) = struct.unpack_from("<I", buf, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    header = json.loads(buf[off : off + hlen].decode("utf-8"))
    off += hlen
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off)
        off += 4 * n
        params[name] = arr.reshape(shape).astype(np.float32, copy=True)
    if off != len(buf):
        raise ValueError(f"{path}: {len(buf) - off} trailing bytes in checkpoint")
    return header, params


def save_encoder(path, model: EncoderModel, vocab_hash: str, extra: dict | None = None):
    header = {
        "kind": "encoder",
        "config": model.config.to_dict(),
        "vocab_hash": vocab_hash,
    }
    if extra:
        header.update(extra)
    save_checkpoint(path, header, model.params)


def load_encoder(path, expect_vocab_hash: str | None = None):
    """-> (EncoderModel, header). Optionally enforces the vocab hash."""
    header, params = load_checkpoint(path)
    if header.get("kind") not in ("encoder", "slu"):
        raise ValueError(f"{path}: checkpoint kind {header.get('kind')!r} has no encoder")
    if expect_vocab_hash is not None and header["vocab_hash"] != expect_vocab_hash:
        raise ValueError(
            f"{path}: vocab hash mismatch (checkpoint {header['vocab_hash'][:12]}..., "
            f"current vocab {expect_vocab_hash[:12]}...)"
        )
    config = ModelConfig.from_dict(header["config"])
    enc_params = {k: v for k, v in params.items() if not k.startswith("head.")}
    return EncoderModel(config, enc_params), header
