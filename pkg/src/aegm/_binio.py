"""Shared on-disk container: magic, version, JSON header, float32 blocks.

Layout (all integers little-endian):

    8 bytes   magic (b"AEGMFEAT" / b"AEGMCKPT")
    u32       format version
    u32       header length in bytes
    bytes     UTF-8 JSON header
    bytes     concatenated row-major little-endian float32 blocks
"""

import json
import struct

import numpy as np

from .errors import CorruptFile


def write_container(path, magic, version, header, blocks):
    """Write a container file. blocks is a sequence of numpy arrays."""
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<II", version, len(payload)))
        f.write(payload)
        for arr in blocks:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_container(path, magic):
    """Read a container file; returns (version, header dict, raw block bytes)."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:8] != magic:
        raise CorruptFile(f"{path}: not a {magic.decode('ascii')} container")
    version, hlen = struct.unpack_from("<II", data, 8)
    if len(data) < 16 + hlen:
        raise CorruptFile(f"{path}: truncated header")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: bad header ({exc})") from exc
    return version, header, data[16 + hlen:]


def split_blocks(raw, shapes, path="<container>"):
    """Slice concatenated float32 block bytes into arrays of the given shapes."""
    arrays = []
    offset = 0
    for shape in shapes:
        n = int(np.prod(shape, dtype=np.int64))
        nbytes = 4 * n
        if offset + nbytes > len(raw):
            raise CorruptFile(f"{path}: truncated data blocks")
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape)
        arrays.append(arr.copy())
        offset += nbytes
    if offset != len(raw):
        raise CorruptFile(f"{path}: trailing bytes after data blocks")
    return arrays
