"""Fingerprint database and weighted K-nearest-neighbour position matching.

Similarity is the normalized trace ``Tr(AᵀB) / (‖A‖_F ‖B‖_F)``, i.e. the
cosine of the flattened matrices, so it ignores the overall channel power.
"""

import logging
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.metrics.pairwise import cosine_similarity
from sklearn.preprocessing import normalize

from app.errors import ConfigurationError, DimensionMismatchError, FormatError
from fingerprint_app import Fingerprint, FingerprintKind
from fingerprint_app.codec import decode_fingerprint, encode_fingerprint

logger = logging.getLogger(__name__)

# neighbours this close to similarity 1 are treated as exact matches
EXACT_MATCH_TOL = 1e-12


def similarity(omega_a: np.ndarray, omega_b: np.ndarray) -> float:
    a = np.asarray(omega_a, dtype=np.float64)
    b = np.asarray(omega_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"cannot compare fingerprints of shape {a.shape} and {b.shape}")
    if not (np.any(a) and np.any(b)):
        raise ConfigurationError("similarity is undefined for a zero fingerprint")
    value = cosine_similarity(a.reshape(1, -1), b.reshape(1, -1))[0, 0]
    return float(min(value, 1.0))


@dataclass(frozen=True, eq=False)
class FingerprintDatabase:
    """Immutable stack of reference fingerprints with their positions."""

    omegas: np.ndarray      # (R, MN, C)
    positions: np.ndarray   # (R, 3)
    M: int
    N: int
    kind: FingerprintKind = FingerprintKind.ADCPM

    def __post_init__(self) -> None:
        if self.omegas.ndim != 3 or self.omegas.shape[1] != self.M * self.N:
            raise DimensionMismatchError(
                f"database entries of shape {self.omegas.shape[1:]} do not match a {self.M}x{self.N} array"
            )
        if self.positions.shape != (len(self.omegas), 3):
            raise DimensionMismatchError(
                f"{len(self.omegas)} fingerprints but positions of shape {self.positions.shape}"
            )
        if len(self.omegas) == 0:
            raise ConfigurationError("fingerprint database is empty")
        norms = np.linalg.norm(self.omegas.reshape(len(self.omegas), -1), axis=1)
        if np.any(norms == 0):
            raise ConfigurationError(f"database entry {int(np.argmin(norms))} has zero norm")

    @classmethod
    def from_fingerprints(cls, fingerprints: Sequence[Fingerprint], positions) -> "FingerprintDatabase":
        if not fingerprints:
            raise ConfigurationError("fingerprint database is empty")
        first = fingerprints[0]
        for i, fp in enumerate(fingerprints):
            if (fp.M, fp.N, fp.columns, fp.kind) != (first.M, first.N, first.columns, first.kind):
                raise DimensionMismatchError(f"entry {i} does not share the dimensions of entry 0")
        omegas = np.stack([fp.omega for fp in fingerprints])
        return cls(omegas, np.asarray(positions, dtype=np.float64), first.M, first.N, first.kind)

    def __len__(self) -> int:
        return len(self.omegas)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.M, self.N, self.omegas.shape[2]

    @cached_property
    def _unit_rows(self) -> np.ndarray:
        return normalize(self.omegas.reshape(len(self), -1))

    def similarities(self, omegas: np.ndarray) -> np.ndarray:
        """Similarity of each query (Q, MN, C) against every entry, shape (Q, R)."""
        omegas = np.asarray(omegas, dtype=np.float64)
        if omegas.shape[1:] != self.omegas.shape[1:]:
            raise DimensionMismatchError(
                f"query of shape {omegas.shape[1:]} does not match database entries {self.omegas.shape[1:]}"
            )
        flat = omegas.reshape(len(omegas), -1)
        if np.any(~flat.any(axis=1)):
            raise ConfigurationError("similarity is undefined for a zero fingerprint")
        return np.minimum(normalize(flat) @ self._unit_rows.T, 1.0)


def _weights(sims: np.ndarray) -> np.ndarray:
    exact = sims >= 1.0 - EXACT_MATCH_TOL
    if exact.any():
        return exact / exact.sum()
    total = sims.sum()
    if total <= 0:
        return np.full(len(sims), 1.0 / len(sims))
    return sims / total


def query_many(db: FingerprintDatabase, omegas: np.ndarray, K: int) -> np.ndarray:
    """Positions estimated for a stack of query fingerprints, shape (Q, 3)."""
    if K < 1:
        raise ConfigurationError(f"K must be >= 1, got {K}")
    if K > len(db):
        raise ConfigurationError(f"K={K} exceeds the database size {len(db)}")
    sims = db.similarities(omegas)
    estimates = np.empty((len(sims), 3))
    ties = 0
    for q, row in enumerate(sims):
        # stable sort keeps the lower entry index first among ties
        order = np.argsort(-row, kind="stable")
        nearest = order[:K]
        if K < len(row) and row[order[K - 1]] == row[order[K]]:
            ties += 1
        estimates[q] = _weights(row[nearest]) @ db.positions[nearest]
    if ties:
        logger.warning("WKNN tie at the K=%d boundary for %d of %d queries", K, ties, len(sims))
    return estimates


def query(db: FingerprintDatabase, omega: np.ndarray, K: int = 4) -> np.ndarray:
    return query_many(db, np.asarray(omega)[None], K)[0]


# ── Database file ────────────────────────────────────────────────────────────
DATABASE_MAGIC = b"ADCPMDB\x00"
DATABASE_VERSION = 1
_DB_HEADER = struct.Struct("<8sII")
_POSITION = struct.Struct("<3d")


def encode_database(db: FingerprintDatabase) -> bytes:
    parts = [_DB_HEADER.pack(DATABASE_MAGIC, DATABASE_VERSION, len(db))]
    for omega, position in zip(db.omegas, db.positions):
        parts.append(encode_fingerprint(Fingerprint(omega, db.kind, db.M, db.N)))
        parts.append(_POSITION.pack(*position))
    return b"".join(parts)


def save_database(db: FingerprintDatabase, path: Path) -> int:
    data = encode_database(db)
    Path(path).write_bytes(data)
    logger.info("Wrote fingerprint database with %d entries (%d bytes) to %s", len(db), len(data), path)
    return len(data)


def decode_database(buf: bytes) -> FingerprintDatabase:
    if len(buf) < _DB_HEADER.size:
        raise FormatError("truncated database header")
    magic, version, count = _DB_HEADER.unpack_from(buf, 0)
    if magic != DATABASE_MAGIC:
        raise FormatError(f"bad database magic {magic!r}")
    if version != DATABASE_VERSION:
        raise FormatError(f"unsupported database version {version}")
    pos = _DB_HEADER.size
    fingerprints, positions = [], []
    for i in range(count):
        fp, pos = decode_fingerprint(buf, pos)
        if pos + _POSITION.size > len(buf):
            raise FormatError(f"record {i} is missing its position")
        positions.append(_POSITION.unpack_from(buf, pos))
        pos += _POSITION.size
        fingerprints.append(fp)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after {count} records")
    try:
        return FingerprintDatabase.from_fingerprints(fingerprints, positions)
    except ValueError as exc:
        raise FormatError(f"inconsistent database records: {exc}") from exc


def load_database(path: Path) -> FingerprintDatabase:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read fingerprint database {path}: {exc}") from exc
    return decode_database(data)
