"""Versioned binary checkpoints with integrity checking.

Layout: magic ``FGCK`` | u32 version | u64 header length | JSON header
(step, config echo, rng state, optimizer counters, tensor index) | raw
little-endian tensor payloads in index order | u32 CRC32 of everything
before it.  Saves are atomic (temp file + rename), and every load failure
mode is a distinct exception: wrong magic, unsupported version, truncation,
checksum mismatch, and shape conflicts when restoring into live models.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

MAGIC = b"FGCK"
VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class DimensionMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    step: int
    config: dict
    rng_state: dict
    counters: dict
    tensors: dict[str, np.ndarray]


def save_checkpoint(path: str, step: int, config: dict, rng_state: dict,
                    counters: dict, tensors: dict[str, np.ndarray]) -> None:
    index = []
    payloads = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        index.append({"name": name, "dtype": arr.dtype.name,
                      "shape": list(arr.shape)})
        payloads.append(le.tobytes())
    header = json.dumps({
        "step": int(step),
        "config": config,
        "rng_state": rng_state,
        "counters": counters,
        "tensors": index,
    }).encode("utf-8")

    body = MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(header)) + header
    body += b"".join(payloads)
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(body)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20:
        raise TruncatedError(f"checkpoint {path} is only {len(blob)} bytes")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path} is not a checkpoint (magic {blob[:4]!r})")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"checksum mismatch in {path}: stored {stored_crc:#010x}, "
            f"computed {actual_crc:#010x}"
        )
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header_end = 16 + header_len
    if header_end > len(blob) - 4:
        raise TruncatedError(f"checkpoint {path} header exceeds file size")
    try:
        header = json.loads(blob[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TruncatedError(f"unreadable checkpoint header in {path}: {exc}") from exc

    tensors: dict[str, np.ndarray] = {}
    offset = header_end
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        end = offset + nbytes
        if end > len(blob) - 4:
            raise TruncatedError(
                f"checkpoint {path} payload for {entry['name']!r} is truncated"
            )
        arr = np.frombuffer(blob[offset:end], dtype=dtype).reshape(shape)
        tensors[entry["name"]] = arr.astype(np.dtype(entry["dtype"]))
        offset = end
    if offset != len(blob) - 4:
        raise TruncatedError(f"checkpoint {path} has {len(blob) - 4 - offset} stray bytes")

    return Checkpoint(step=int(header["step"]), config=header["config"],
                      rng_state=header["rng_state"], counters=header["counters"],
                      tensors=tensors)


def restore_params(params: dict, table: dict[str, np.ndarray], prefix: str) -> None:
    """Copy checkpoint arrays into live parameter tensors, shape-checked."""
    for name, p in params.items():
        key = f"{prefix}.{name}"
        if key not in table:
            raise DimensionMismatchError(f"checkpoint is missing tensor {key!r}")
        arr = table[key]
        if arr.shape != p.data.shape:
            raise DimensionMismatchError(
                f"tensor {key!r} has shape {arr.shape}, model expects {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype, copy=True)
