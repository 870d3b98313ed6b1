"""Binary fingerprint container and CSV export.

Layout (little-endian)
----------------------
header   8-byte magic ``ADCPMFP\\0``, uint32 version, uint32 reserved
dims     uint32 M, uint32 N, uint32 columns (Ng for ADCPM, Nc for SFCPM)
kind     uint8 (0 = ADCPM, 1 = SFCPM)
payload  M·N·columns float64, row-major
"""

import csv
import logging
import struct
from pathlib import Path

import numpy as np

from app.errors import FormatError
from fingerprint_app import Fingerprint, FingerprintKind

logger = logging.getLogger(__name__)

# ── Wire constants ───────────────────────────────────────────────────────────
FINGERPRINT_MAGIC = b"ADCPMFP\x00"
FINGERPRINT_VERSION = 1
_HEADER = struct.Struct("<8sII")
_DIMS = struct.Struct("<IIIB")
_PAYLOAD_DTYPE = np.dtype("<f8")

_KIND_TAGS = {FingerprintKind.ADCPM: 0, FingerprintKind.SFCPM: 1}
_TAG_KINDS = {tag: kind for kind, tag in _KIND_TAGS.items()}


def encode_fingerprint(fp: Fingerprint) -> bytes:
    head = _HEADER.pack(FINGERPRINT_MAGIC, FINGERPRINT_VERSION, 0)
    dims = _DIMS.pack(fp.M, fp.N, fp.columns, _KIND_TAGS[fp.kind])
    return head + dims + np.ascontiguousarray(fp.omega, dtype=_PAYLOAD_DTYPE).tobytes()


def decode_fingerprint(buf: bytes, pos: int = 0) -> tuple[Fingerprint, int]:
    """Decode one container starting at *pos*; return (fingerprint, new_pos)."""
    if pos + _HEADER.size + _DIMS.size > len(buf):
        raise FormatError(f"truncated fingerprint header at offset {pos}")
    magic, version, _reserved = _HEADER.unpack_from(buf, pos)
    if magic != FINGERPRINT_MAGIC:
        raise FormatError(f"bad fingerprint magic {magic!r} at offset {pos}")
    if version != FINGERPRINT_VERSION:
        raise FormatError(f"unsupported fingerprint version {version}")
    pos += _HEADER.size

    M, N, columns, tag = _DIMS.unpack_from(buf, pos)
    pos += _DIMS.size
    if tag not in _TAG_KINDS:
        raise FormatError(f"unknown fingerprint kind tag {tag}")
    if M == 0 or N == 0 or columns == 0:
        raise FormatError(f"empty fingerprint dimensions {M}x{N}x{columns}")

    count = M * N * columns
    end = pos + count * _PAYLOAD_DTYPE.itemsize
    if end > len(buf):
        raise FormatError(f"fingerprint payload truncated: need {end - pos} bytes, have {len(buf) - pos}")
    omega = np.frombuffer(buf, dtype=_PAYLOAD_DTYPE, count=count, offset=pos)
    omega = omega.astype(np.float64).reshape(M * N, columns)
    try:
        fp = Fingerprint(omega, _TAG_KINDS[tag], M, N)
    except ValueError as exc:
        raise FormatError(f"invalid fingerprint payload: {exc}") from exc
    return fp, end


def save_fingerprint(fp: Fingerprint, path: Path) -> int:
    data = encode_fingerprint(fp)
    Path(path).write_bytes(data)
    logger.debug("Wrote %s fingerprint (%d bytes) to %s", fp.kind.value, len(data), path)
    return len(data)


def load_fingerprint(path: Path) -> Fingerprint:
    buf = Path(path).read_bytes()
    fp, end = decode_fingerprint(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after fingerprint in {path}")
    return fp


def export_fingerprint_csv(fp: Fingerprint, path: Path) -> None:
    """One row per angle index, one column per delay (or subcarrier) index."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["angle_index", *(f"col_{j}" for j in range(fp.columns))])
        for i, row in enumerate(fp.omega):
            writer.writerow([i, *(repr(float(v)) for v in row)])
