"""Binary containers for model weights and utterance embeddings.

Weight files ("FTMW") hold an ordered list of named float32 tensors:

    magic "FTMW" | version u32 | tensor count u32
    per tensor: name_len u32 | name utf-8 | rank u32 | dims u32 * rank | float32 data

Embedding files ("FTME") hold fixed-width vectors keyed by utterance id:

    magic "FTME" | version u32 | record count u32
    per record: id_len u32 | id utf-8 | 64 float32

All integers and floats are little-endian. Writers emit tensors and
records in a deterministic order so files round-trip byte-identically.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, MissingFileError

WEIGHTS_MAGIC = b"FTMW"
EMBEDDINGS_MAGIC = b"FTME"
WEIGHTS_FORMAT_VERSION = 1
EMBEDDINGS_FORMAT_VERSION = 1
EMBEDDING_DIM = 64

_U32 = struct.Struct("<I")


def _read_u32(fh, path, what: str) -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError(f"format error: truncated {what} in {path}")
    return _U32.unpack(raw)[0]


def _read_exact(fh, n: int, path, what: str) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatError(f"format error: truncated {what} in {path}")
    return raw


def save_weights(tensors: dict[str, np.ndarray], path: str | Path) -> None:
    """Write named tensors in dict insertion order."""
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(_U32.pack(WEIGHTS_FORMAT_VERSION))
        fh.write(_U32.pack(len(tensors)))
        for name, tensor in tensors.items():
            arr = np.ascontiguousarray(tensor, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(_U32.pack(len(encoded)))
            fh.write(encoded)
            fh.write(_U32.pack(arr.ndim))
            for dim in arr.shape:
                fh.write(_U32.pack(dim))
            fh.write(arr.tobytes())


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    """Read an FTMW file into an ordered name -> float32 array dict."""
    if not Path(path).is_file():
        raise MissingFileError(f"missing file: {path}")
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != WEIGHTS_MAGIC:
            raise FormatError(f"format error: bad magic {magic!r} in {path}")
        version = _read_u32(fh, path, "version")
        if version != WEIGHTS_FORMAT_VERSION:
            raise FormatError(f"format error: unsupported version {version} in {path}")
        count = _read_u32(fh, path, "tensor count")
        for _ in range(count):
            name_len = _read_u32(fh, path, "name length")
            try:
                name = _read_exact(fh, name_len, path, "tensor name").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError(f"format error: undecodable tensor name in {path}") from exc
            if name in tensors:
                raise FormatError(f"format error: duplicate tensor {name!r} in {path}")
            rank = _read_u32(fh, path, "rank")
            if rank > 8:
                raise FormatError(f"format error: implausible rank {rank} in {path}")
            shape = tuple(_read_u32(fh, path, "dimension") for _ in range(rank))
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = _read_exact(fh, 4 * size, path, f"tensor {name!r} data")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise FormatError(f"format error: trailing bytes in {path}")
    return tensors


def save_embeddings(embeddings: dict[str, np.ndarray], path: str | Path) -> None:
    """Write 64-dim utterance embeddings in dict insertion order."""
    with open(path, "wb") as fh:
        fh.write(EMBEDDINGS_MAGIC)
        fh.write(_U32.pack(EMBEDDINGS_FORMAT_VERSION))
        fh.write(_U32.pack(len(embeddings)))
        for utt_id, vec in embeddings.items():
            arr = np.ascontiguousarray(vec, dtype="<f4").reshape(-1)
            if arr.shape[0] != EMBEDDING_DIM:
                raise FormatError(
                    f"format error: embedding for {utt_id!r} has dim {arr.shape[0]}, "
                    f"expected {EMBEDDING_DIM}"
                )
            encoded = utt_id.encode("utf-8")
            fh.write(_U32.pack(len(encoded)))
            fh.write(encoded)
            fh.write(arr.tobytes())


def load_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    """Read an FTME file into an ordered id -> float32[64] dict."""
    if not Path(path).is_file():
        raise MissingFileError(f"missing file: {path}")
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMBEDDINGS_MAGIC:
            raise FormatError(f"format error: bad magic {magic!r} in {path}")
        version = _read_u32(fh, path, "version")
        if version != EMBEDDINGS_FORMAT_VERSION:
            raise FormatError(f"format error: unsupported version {version} in {path}")
        count = _read_u32(fh, path, "record count")
        for _ in range(count):
            id_len = _read_u32(fh, path, "id length")
            try:
                utt_id = _read_exact(fh, id_len, path, "utterance id").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError(f"format error: undecodable utterance id in {path}") from exc
            if utt_id in out:
                raise FormatError(f"format error: duplicate id {utt_id!r} in {path}")
            payload = _read_exact(fh, 4 * EMBEDDING_DIM, path, f"embedding {utt_id!r}")
            out[utt_id] = np.frombuffer(payload, dtype="<f4").copy()
        if fh.read(1):
            raise FormatError(f"format error: trailing bytes in {path}")
    return out
