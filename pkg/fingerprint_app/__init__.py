"""Angle-delay fingerprints.

The space-frequency channel H (MN × Nc) is mapped to the angle-delay domain
with phase-shifted DFTs along both array axes and a truncated DFT along the
subcarriers.  Its elementwise power, averaged over small-scale fading, is the
ADCPM fingerprint; the same average taken directly on H is the SFCPM.

All transforms are applied axis by axis; the MN × MN Kronecker matrix is
never formed.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from app.errors import ConfigurationError, DimensionMismatchError
from app.models.system import ArrayGeometry, OFDMConfig
from channel_app import PathSet, delay_response, sample_gains, sfcrm, steering_horizontal, steering_vertical

logger = logging.getLogger(__name__)

# complex entries per Monte-Carlo chunk
_MC_CHUNK_ENTRIES = 1 << 22


class FingerprintKind(str, Enum):
    ADCPM = "adcpm"
    SFCPM = "sfcpm"


@dataclass(frozen=True, eq=False)
class Fingerprint:
    """Nonnegative power matrix with the array layout needed to fold it into a tensor.

    ``omega`` is MN × Ng for ADCPM and MN × Nc for SFCPM.
    """

    omega: np.ndarray
    kind: FingerprintKind
    M: int
    N: int

    def __post_init__(self) -> None:
        if self.omega.ndim != 2 or self.omega.shape[0] != self.M * self.N:
            raise DimensionMismatchError(
                f"fingerprint of shape {self.omega.shape} does not match a {self.M}x{self.N} array"
            )
        if np.any(self.omega < 0):
            raise ConfigurationError("fingerprint entries must be nonnegative")

    @property
    def columns(self) -> int:
        return self.omega.shape[1]

    @property
    def x(self) -> np.ndarray:
        return reshape_fingerprint(self.omega, self.N)

    def scaled(self, factor: float) -> "Fingerprint":
        return Fingerprint(self.omega * factor, self.kind, self.M, self.N)


# ── DFT matrices ─────────────────────────────────────────────────────────────

@lru_cache(maxsize=32)
def _dft_phase_shifted_cached(M: int) -> np.ndarray:
    m = np.arange(M)[:, None]
    n = np.arange(M)[None, :]
    V = np.exp(-2j * np.pi * m * (n - M / 2) / M) / np.sqrt(M)
    V.setflags(write=False)
    return V


def dft_phase_shifted(M: int) -> np.ndarray:
    """Unitary M × M DFT whose column n is steered to ``(n - M/2)/M``."""
    if M < 1:
        raise ConfigurationError(f"DFT size must be >= 1, got {M}")
    return _dft_phase_shifted_cached(int(M))


@lru_cache(maxsize=32)
def _dft_truncated_cached(Nc: int, Ng: int) -> np.ndarray:
    i = np.arange(Nc)[:, None]
    j = np.arange(Ng)[None, :]
    F = np.exp(-2j * np.pi * i * j / Nc) / np.sqrt(Nc)
    F.setflags(write=False)
    return F


def dft_truncated(Nc: int, Ng: int) -> np.ndarray:
    """First ``Ng`` columns of the unitary Nc-point DFT matrix."""
    if Nc < 1 or Ng < 1:
        raise ConfigurationError(f"DFT dimensions must be positive, got Nc={Nc}, Ng={Ng}")
    if Ng > Nc:
        raise ConfigurationError(f"guard length Ng={Ng} exceeds subcarrier count Nc={Nc}")
    return _dft_truncated_cached(int(Nc), int(Ng))


# ── Angle-delay transform ────────────────────────────────────────────────────

def angle_transform(q: np.ndarray, M: int, N: int) -> np.ndarray:
    """Apply V_M^H and V_N^H along the folded (M, N) axes sitting at positions -3, -2."""
    VMh = dft_phase_shifted(M).conj().T
    VNh = dft_phase_shifted(N).conj().T
    q = np.einsum("km,...mnc->...knc", VMh, q)
    return np.einsum("ln,...knc->...klc", VNh, q)


def to_angle_delay(H: np.ndarray, geom: ArrayGeometry, ofdm: OFDMConfig) -> np.ndarray:
    """ADCRM ``G = (V_M^H ⊗ V_N^H) H F* / sqrt(M N Nc)``.

    An integer path delay r lands in column r.  Leading batch axes are kept.
    """
    H = np.asarray(H)
    M, N = geom.M, geom.N
    if H.ndim < 2 or H.shape[-2:] != (M * N, ofdm.Nc):
        raise DimensionMismatchError(f"channel of shape {H.shape} is not {M * N}x{ofdm.Nc}")
    batch = H.shape[:-2]
    folded = H.reshape(*batch, M, N, ofdm.Nc)
    G = angle_transform(folded, M, N) @ dft_truncated(ofdm.Nc, ofdm.Ng).conj()
    return G.reshape(*batch, M * N, ofdm.Ng) / np.sqrt(M * N * ofdm.Nc)


def _path_factors(paths: PathSet, geom: ArrayGeometry, ofdm: OFDMConfig):
    """Per-path separable factors of the angle-delay response of a unit-gain path.

    Returns arrays of shape (P, M), (P, N), (P, Ng) whose outer product divided
    by sqrt(M N Nc) is the path's ADCRM.
    """
    VMh = dft_phase_shifted(geom.M).conj().T
    VNh = dft_phase_shifted(geom.N).conj().T
    vertical = steering_vertical(geom, paths.theta) @ VMh.T
    horizontal = steering_horizontal(geom, paths.theta, paths.phi) @ VNh.T
    delay = delay_response(ofdm, paths.r) @ dft_truncated(ofdm.Nc, ofdm.Ng).conj()
    return vertical, horizontal, delay


def path_responses(paths: PathSet, geom: ArrayGeometry, ofdm: OFDMConfig) -> np.ndarray:
    """ADCRM of each path at unit gain, shape (P, MN, Ng)."""
    vertical, horizontal, delay = _path_factors(paths, geom, ofdm)
    T = np.einsum("pk,pl,pj->pklj", vertical, horizontal, delay)
    return T.reshape(len(paths), geom.antennas, ofdm.Ng) / np.sqrt(geom.antennas * ofdm.Nc)


# ── Power matrices ───────────────────────────────────────────────────────────

def adcpm_exact(paths: PathSet, geom: ArrayGeometry, ofdm: OFDMConfig) -> Fingerprint:
    """Closed-form ADCPM ``Σ_p σ²_p |T_p|²``; cross terms vanish for independent zero-mean gains."""
    vertical, horizontal, delay = _path_factors(paths, geom, ofdm)
    omega = np.einsum(
        "p,pk,pl,pj->klj",
        paths.sigma2,
        np.abs(vertical) ** 2,
        np.abs(horizontal) ** 2,
        np.abs(delay) ** 2,
    )
    omega = omega.reshape(geom.antennas, ofdm.Ng) / (geom.antennas * ofdm.Nc)
    return Fingerprint(omega, FingerprintKind.ADCPM, geom.M, geom.N)


def sfcpm_exact(paths: PathSet, geom: ArrayGeometry, ofdm: OFDMConfig) -> Fingerprint:
    """Closed-form SFCPM.

    Steering and delay entries have unit magnitude, so with independent gains
    every entry equals the total path power and the matrix carries no
    position information beyond it.
    """
    omega = np.full((geom.antennas, ofdm.Nc), paths.total_power)
    return Fingerprint(omega, FingerprintKind.SFCPM, geom.M, geom.N)


def awgn_contaminate(H: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add circular complex Gaussian noise at *snr_db* relative to ``mean(|H|²)``.

    For a stack of channels the mean is taken per matrix.
    """
    if not np.isfinite(snr_db):
        raise ConfigurationError(f"SNR must be finite, got {snr_db}")
    H = np.asarray(H)
    signal = np.mean(np.abs(H) ** 2, axis=(-2, -1), keepdims=True)
    scale = np.sqrt(signal / 10.0 ** (snr_db / 10.0) / 2)
    noise = rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape)
    return H + scale * noise


def monte_carlo_power(
    paths: PathSet,
    geom: ArrayGeometry,
    ofdm: OFDMConfig,
    n_samples: int,
    rng: np.random.Generator,
    kind: FingerprintKind = FingerprintKind.ADCPM,
    snr_db: float | None = None,
    chunk_size: int | None = None,
) -> Fingerprint:
    """Average ``|G|²`` (ADCPM) or ``|H|²`` (SFCPM) over *n_samples* gain draws.

    Noiseless ADCPM draws use linearity in the gains; with *snr_db* set, each
    drawn channel is contaminated before the transform.  Chunks are reduced in
    draw order, so the result depends only on the generator state.
    """
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1, got {n_samples}")
    kind = FingerprintKind(kind)
    columns = ofdm.Ng if kind is FingerprintKind.ADCPM else ofdm.Nc
    if chunk_size is None:
        chunk_size = max(1, _MC_CHUNK_ENTRIES // (geom.antennas * max(columns, ofdm.Nc)))

    fast_path = kind is FingerprintKind.ADCPM and snr_db is None
    if fast_path:
        T = path_responses(paths, geom, ofdm).reshape(len(paths), -1)

    total = np.zeros((geom.antennas, columns))
    done = 0
    while done < n_samples:
        size = min(chunk_size, n_samples - done)
        gains = sample_gains(paths, rng, size=size)
        if fast_path:
            block = (gains @ T).reshape(size, geom.antennas, columns)
        else:
            block = sfcrm(paths, gains, geom, ofdm)
            if snr_db is not None:
                block = awgn_contaminate(block, snr_db, rng)
            if kind is FingerprintKind.ADCPM:
                block = to_angle_delay(block, geom, ofdm)
        total += np.sum(np.abs(block) ** 2, axis=0)
        done += size
        logger.debug("Monte-Carlo %s: %d/%d draws", kind.value, done, n_samples)
    return Fingerprint(total / n_samples, kind, geom.M, geom.N)


def adcpm_mc(paths, geom, ofdm, n_samples, rng, snr_db=None) -> Fingerprint:
    return monte_carlo_power(paths, geom, ofdm, n_samples, rng, FingerprintKind.ADCPM, snr_db)


def sfcpm_mc(paths, geom, ofdm, n_samples, rng, snr_db=None) -> Fingerprint:
    return monte_carlo_power(paths, geom, ofdm, n_samples, rng, FingerprintKind.SFCPM, snr_db)


# ── Tensor view and filtering ────────────────────────────────────────────────

def reshape_fingerprint(omega: np.ndarray, N: int) -> np.ndarray:
    """Fold MN × Ng into M × N × Ng with ``x[m, n, j] = omega[m*N + n, j]``."""
    omega = np.asarray(omega)
    if omega.ndim != 2 or N < 1 or omega.shape[0] % N:
        raise DimensionMismatchError(f"cannot fold {omega.shape} rows into groups of N={N}")
    return omega.reshape(omega.shape[0] // N, N, omega.shape[1])


def flatten_fingerprint(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`reshape_fingerprint`."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise DimensionMismatchError(f"expected an M x N x Ng tensor, got shape {x.shape}")
    return x.reshape(x.shape[0] * x.shape[1], x.shape[2])


def denoise(x: np.ndarray, alpha: float) -> np.ndarray:
    """Zero every entry below ``alpha * max(x)``."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"denoise threshold must lie in [0, 1], got {alpha}")
    x = np.asarray(x)
    out = x.copy()
    if x.size == 0:
        return out
    out[x < alpha * x.max()] = 0
    return out
