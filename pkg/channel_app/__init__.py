"""Multipath channel model for a uniform planar array with OFDM.

Steering vectors, complex path gains and the space-frequency channel
response matrix (SFCRM).  Scatterer scenes that produce per-position path
sets live in :mod:`channel_app.scene`.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from app.errors import ConfigurationError, DimensionMismatchError
from app.models.system import ArrayGeometry, OFDMConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PathParam:
    """One propagation path: elevation, azimuth (radians), delay (samples), power."""

    theta: float
    phi: float
    r: float
    sigma2: float

    def __post_init__(self) -> None:
        if not self.sigma2 > 0:
            raise ConfigurationError(f"path power must be positive, got {self.sigma2}")
        if self.r < 0:
            raise ConfigurationError(f"path delay must be non-negative, got {self.r}")


@dataclass(frozen=True)
class PathSet:
    """All paths reaching the base station from one user position."""

    paths: tuple[PathParam, ...]
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    _arrays: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.paths:
            raise ConfigurationError("a path set needs at least one path")

    def __len__(self) -> int:
        return len(self.paths)

    def _column(self, name: str) -> np.ndarray:
        if name not in self._arrays:
            self._arrays[name] = np.array([getattr(p, name) for p in self.paths], dtype=np.float64)
        return self._arrays[name]

    @property
    def theta(self) -> np.ndarray:
        return self._column("theta")

    @property
    def phi(self) -> np.ndarray:
        return self._column("phi")

    @property
    def r(self) -> np.ndarray:
        return self._column("r")

    @property
    def sigma2(self) -> np.ndarray:
        return self._column("sigma2")

    @property
    def total_power(self) -> float:
        return float(self.sigma2.sum())

    def check_guard(self, ofdm: OFDMConfig) -> None:
        if np.any(self.r >= ofdm.Ng):
            raise ConfigurationError(
                f"path delay {self.r.max():.3f} samples does not fit the guard interval Ng={ofdm.Ng}"
            )


# ── Steering vectors ─────────────────────────────────────────────────────────

def steering_vertical(geom: ArrayGeometry, theta) -> np.ndarray:
    """Column response ``exp(-j 2π m (d_v/λ) cos θ)``; a leading axis per angle if *theta* is an array."""
    m = np.arange(geom.M)
    phase = np.multiply.outer(np.cos(theta), m) * (geom.d_v / geom.lambda_c)
    return np.exp(-2j * np.pi * phase)


def steering_horizontal(geom: ArrayGeometry, theta, phi) -> np.ndarray:
    """Row response ``exp(-j 2π n (d_h/λ) sin θ cos φ)``."""
    n = np.arange(geom.N)
    phase = np.multiply.outer(np.sin(theta) * np.cos(phi), n) * (geom.d_h / geom.lambda_c)
    return np.exp(-2j * np.pi * phase)


def steering(geom: ArrayGeometry, theta, phi) -> np.ndarray:
    """Full array response: Kronecker product vertical ⊗ horizontal (length M·N)."""
    ev = steering_vertical(geom, theta)
    eh = steering_horizontal(geom, theta, phi)
    # batched kron: element m*N + n is ev[m] * eh[n]
    return (ev[..., :, None] * eh[..., None, :]).reshape(*ev.shape[:-1], geom.antennas)


def delay_response(ofdm: OFDMConfig, r) -> np.ndarray:
    """Per-subcarrier phase ramp ``exp(-j 2π l r / Nc)``."""
    l = np.arange(ofdm.Nc)
    return np.exp(-2j * np.pi * np.multiply.outer(r, l) / ofdm.Nc)


# ── Fading ───────────────────────────────────────────────────────────────────

def sample_gains(paths: PathSet, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw circularly symmetric complex Gaussian path gains ``a_p ~ CN(0, σ²_p)``.

    With *size* set, returns ``size`` independent draws stacked on a leading axis.
    """
    shape = (len(paths),) if size is None else (size, len(paths))
    scale = np.sqrt(paths.sigma2 / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sfcrm(paths: PathSet, gains: np.ndarray, geom: ArrayGeometry, ofdm: OFDMConfig) -> np.ndarray:
    """Space-frequency channel response matrix, MN × Nc.

    Column ``l`` is ``Σ_p a_p e(θ_p, φ_p) exp(-j 2π l r_p / Nc)``.  A 2-D
    *gains* array (realizations × paths) yields a stack of matrices.
    """
    gains = np.asarray(gains)
    if gains.shape[-1] != len(paths):
        raise DimensionMismatchError(f"{gains.shape[-1]} gains for {len(paths)} paths")
    e = steering(geom, paths.theta, paths.phi)       # (P, MN)
    d = delay_response(ofdm, paths.r)                 # (P, Nc)
    if gains.ndim == 1:
        return (e.T * gains) @ d
    return np.einsum("sp,pi,pl->sil", gains, e, d, optimize=True)
