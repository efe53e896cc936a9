"""Binary weight archive ("VPW1").

Layout, all little-endian::

    magic       4 bytes  b"VPW1"
    version     u8       1
    count       u32      number of named tensors
    per tensor:
        name_len  u32, name  utf-8 bytes
        rank      u32, dims  rank x u64
        values    prod(dims) x float32
    crc32       u32      over every preceding byte
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import CorruptArchiveError, IncompatibleWeightsError

MAGIC = b"VPW1"
VERSION = 1


def encode_archive(state: dict[str, np.ndarray], magic: bytes = MAGIC) -> bytes:
    parts = [magic, struct.pack("<BI", VERSION, len(state))]
    for name, value in state.items():
        value = np.asarray(value)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack("<I", value.ndim) + struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_archive(raw: bytes, magic: bytes = MAGIC) -> dict[str, np.ndarray]:
    if len(raw) < 13 or raw[:4] != magic:
        raise CorruptArchiveError(f"bad magic; expected {magic!r}")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptArchiveError("checksum mismatch (truncated or corrupted archive)")
    version, count = struct.unpack_from("<BI", body, 4)
    if version != VERSION:
        raise CorruptArchiveError(f"unsupported archive version {version}")
    pos = 9
    state = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            n = int(np.prod(dims, dtype=np.int64))
            values = np.frombuffer(body, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            state[name] = values.reshape(dims).astype(np.float32)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptArchiveError(f"malformed archive: {exc}") from exc
    if pos != len(body):
        raise CorruptArchiveError(f"{len(body) - pos} trailing bytes after last tensor")
    return state


def fingerprint(raw: bytes) -> int:
    """Identity of a weight archive: its stored CRC32."""
    return struct.unpack("<I", raw[-4:])[0]


def write_atomic(path, raw: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(raw)
    os.replace(tmp, path)


def save_weights(network, path) -> int:
    """Write ``network.state_dict()``; returns the archive fingerprint."""
    raw = encode_archive(network.state_dict())
    write_atomic(path, raw)
    return fingerprint(raw)


def read_weights(path) -> dict[str, np.ndarray]:
    return decode_archive(Path(path).read_bytes())


def check_compatible(network, state: dict[str, np.ndarray]) -> None:
    expected = network.state_dict()
    for (want_name, want), (got_name, got) in zip(expected.items(), state.items()):
        if want_name != got_name or want.shape != got.shape:
            raise IncompatibleWeightsError(
                f"first mismatched layer: expected {want_name} {tuple(want.shape)}, "
                f"archive has {got_name} {tuple(got.shape)}"
            )
    if len(expected) != len(state):
        raise IncompatibleWeightsError(
            f"expected {len(expected)} tensors, archive has {len(state)}"
        )


def load_weights(network, path):
    """Load an archive into ``network`` after verifying names and shapes."""
    raw = Path(path).read_bytes()
    state = decode_archive(raw)
    check_compatible(network, state)
    network.load_state_dict(state)
    network.fingerprint = fingerprint(raw)
    return network
