"""Where an ADCPM concentrates, and how much of its power sits there."""

import logging
from dataclasses import dataclass

import numpy as np

from app.errors import ConfigurationError, DimensionMismatchError
from app.models.system import ArrayGeometry, OFDMConfig
from channel_app import PathParam, PathSet
from fingerprint_app import angle_transform, reshape_fingerprint

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SupportPrediction:
    """Real-valued angle-delay cell a path concentrates on."""

    m_bar: float
    n_bar: float
    r: float
    sigma2: float


def dirichlet(M: int, x) -> np.ndarray | float:
    """``sin(M x) / (M sin x)``; at multiples of π the limit ``cos(M x) / cos x`` is used."""
    if M < 1:
        raise ConfigurationError(f"M must be >= 1, got {M}")
    x = np.asarray(x, dtype=np.float64)
    s = np.sin(x)
    singular = np.abs(s) < 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        value = np.where(singular, np.cos(M * x) / np.cos(x), np.sin(M * x) / (M * s))
    return float(value) if value.ndim == 0 else value


def predict_support(path: PathParam, geom: ArrayGeometry, ofdm: OFDMConfig) -> SupportPrediction:
    m_bar = geom.M / 2 + geom.M * geom.d_v / geom.lambda_c * np.cos(path.theta)
    n_bar = geom.N / 2 + geom.N * geom.d_h / geom.lambda_c * np.sin(path.theta) * np.cos(path.phi)
    if path.r >= ofdm.Ng:
        logger.warning("Path delay %.2f lies beyond the guard (Ng=%d)", path.r, ofdm.Ng)
    return SupportPrediction(float(m_bar), float(n_bar), float(path.r), float(path.sigma2))


def predict_supports(paths: PathSet, geom: ArrayGeometry, ofdm: OFDMConfig) -> list[SupportPrediction]:
    return [predict_support(p, geom, ofdm) for p in paths.paths]


def angle_domain_cir(q: np.ndarray, geom: ArrayGeometry) -> np.ndarray:
    """``(V_M^H ⊗ V_N^H) q / sqrt(MN)`` for a length-MN antenna vector."""
    q = np.asarray(q)
    if q.shape[-1:] != (geom.antennas,):
        raise DimensionMismatchError(f"vector of shape {q.shape} does not have {geom.antennas} entries")
    folded = q.reshape(*q.shape[:-1], geom.M, geom.N, 1)
    out = angle_transform(folded, geom.M, geom.N)
    return out.reshape(q.shape) / np.sqrt(geom.antennas)


def _nearest(value: float) -> int:
    # half-up, so half-bin offsets round the same way on every platform
    return int(np.floor(value + 0.5))


def support_mask(
    shape: tuple[int, int, int],
    supports: list[SupportPrediction],
    window: int,
) -> np.ndarray:
    """Boolean M × N × Ng mask: union of ±window boxes around each rounded support.

    Angle indices wrap around (DFT periodicity); delay indices are clipped.
    """
    if not supports:
        raise ConfigurationError("at least one support prediction is required")
    if window < 0:
        raise ConfigurationError(f"window must be >= 0, got {window}")
    M, N, Ng = shape
    offsets = np.arange(-window, window + 1)
    mask = np.zeros(shape, dtype=bool)
    for s in supports:
        rows = np.unique((_nearest(s.m_bar) + offsets) % M)
        cols = np.unique((_nearest(s.n_bar) + offsets) % N)
        taps = _nearest(s.r) + offsets
        taps = taps[(taps >= 0) & (taps < Ng)]
        mask[np.ix_(rows, cols, taps)] = True
    return mask


def concentration_fraction(
    omega: np.ndarray,
    supports: list[SupportPrediction],
    window: int,
    geom: ArrayGeometry,
) -> float:
    """Share of the fingerprint power inside the predicted support cells."""
    x = reshape_fingerprint(omega, geom.N)
    total = x.sum()
    if total <= 0:
        raise ConfigurationError("fingerprint carries no power")
    mask = support_mask(x.shape, supports, window)
    return float(x[mask].sum() / total)


def limit_window_fraction(offsets, window: int) -> float:
    """Large-array limit of the power a path leaves inside its ±window box.

    *offsets* are the path's sub-bin distances from the rounded support, one
    per axis, each in [0, 0.5].  Each axis contributes ``Σ_k sinc²(k - δ)``
    over the window; at finite sizes every term is at least its limit, so this
    is also a lower bound for the exact fraction of a lone path.
    """
    if window < 0:
        raise ConfigurationError(f"window must be >= 0, got {window}")
    offsets = np.asarray(offsets, dtype=np.float64)
    if np.any(offsets < 0) or np.any(offsets > 0.5):
        raise ConfigurationError(f"offsets must lie in [0, 0.5], got {offsets}")
    k = np.arange(-window, window + 1)
    return float(np.prod([np.sum(np.sinc(k - delta) ** 2) for delta in offsets]))
