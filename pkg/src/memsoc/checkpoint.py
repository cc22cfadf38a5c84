"""Flat binary checkpoint format.

Layout: magic 'IMCF', u32 version, u32 tensor count, then per tensor a
length-prefixed UTF-8 name, a dtype tag, ndim, the u64 shape, and the raw
little-endian payload; a trailing CRC-32 of all preceding bytes closes the
file. Everything is verified on load.
"""

import struct
import zlib

import numpy as np

from .errors import CheckpointError

MAGIC = b"IMCF"
VERSION = 1

_DTYPES = {0: "<f8", 1: "<i1", 2: "<i2", 3: "<i4", 4: "<i8", 5: "<u1"}
_TAGS = {np.dtype(v): k for k, v in _DTYPES.items()}


def save_checkpoint(path, tensors):
    """Write a mapping of name -> ndarray (dtype must be a supported kind)."""
    body = bytearray()
    body += MAGIC
    body += struct.pack("<II", VERSION, len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        key = np.dtype(arr.dtype.str.replace(">", "<"))
        if key not in _TAGS:
            arr = arr.astype(np.float64)
            key = np.dtype("<f8")
        encoded = name.encode("utf-8")
        body += struct.pack("<I", len(encoded))
        body += encoded
        body += struct.pack("<BB", _TAGS[key], arr.ndim)
        body += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        body += np.ascontiguousarray(arr, dtype=key).tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    offset = 12
    out = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            tag, ndim = struct.unpack_from("<BB", blob, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
            offset += 8 * ndim
            dtype = np.dtype(_DTYPES[tag])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
            arr = np.frombuffer(blob, dtype=dtype, count=max(int(np.prod(shape)), 1) if ndim else 1,
                                offset=offset).reshape(shape)
            offset += nbytes
            out[name] = arr.copy()
    except (struct.error, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or malformed ({exc})") from exc
    if offset != len(blob) - 4:
        raise CheckpointError(f"{path}: trailing bytes after tensor table")
    return out
