"""Reference-point grids, random test points and their fingerprints.

ADCPM training fingerprints are the noiseless closed form at every grid point.
SFCPM training fingerprints are noiseless Monte-Carlo averages, since the
SFCPM closed form is flat and carries no position.  Test fingerprints are
Monte-Carlo averages over the configured number of realizations, optionally
at a finite SNR.  Every Monte-Carlo sample draws from its own seeded stream,
so a sample does not depend on how many others exist.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from app.errors import ConfigurationError
from app.models.experiment import ExperimentConfig
from channel_app.scene import Scene, generate_scene, paths_for_position
from fingerprint_app import (
    Fingerprint,
    FingerprintKind,
    adcpm_exact,
    denoise,
    monte_carlo_power,
)
from wknn_app import FingerprintDatabase, load_database, save_database

logger = logging.getLogger(__name__)

# stream tags under the experiment seed
_TEST_POSITIONS = 1
_TEST_FINGERPRINTS = 2
_TRAIN_FINGERPRINTS = 3


@dataclass(eq=False)
class Dataset:
    omegas: np.ndarray      # (S, MN, C)
    positions: np.ndarray   # (S, 3)
    kind: FingerprintKind
    M: int
    N: int
    split: str
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.omegas)

    @property
    def columns(self) -> int:
        return self.omegas.shape[2]

    def fingerprint(self, i: int) -> Fingerprint:
        return Fingerprint(self.omegas[i], self.kind, self.M, self.N)

    def _rows(self, index: slice | None) -> np.ndarray:
        return self.omegas if index is None else self.omegas[index]

    def tensors(self, index: slice | None = None) -> np.ndarray:
        """Network input for the 3-D CNN: (S, M, N, C, 1), each sample scaled to unit peak."""
        x = _unit_peak(self._rows(index))
        return x.reshape(len(x), self.M, self.N, self.columns, 1)

    def images(self, index: slice | None = None) -> np.ndarray:
        """Network input for the 2-D CNN: (S, MN, C, 1, 1), each sample scaled to unit peak."""
        return _unit_peak(self._rows(index))[..., None, None]

    def to_database(self) -> FingerprintDatabase:
        return FingerprintDatabase(self.omegas, self.positions, self.M, self.N, self.kind)

    def save(self, path: Path) -> int:
        return save_database(self.to_database(), path)

    @classmethod
    def load(cls, path: Path, split: str) -> "Dataset":
        db = load_database(path)
        return cls(db.omegas, db.positions, db.kind, db.M, db.N, split, {"source": str(path)})


def _unit_peak(omegas: np.ndarray) -> np.ndarray:
    peak = omegas.reshape(len(omegas), -1).max(axis=1)
    peak[peak <= 0] = 1.0
    return omegas / peak[:, None, None]


def build_scene(config: ExperimentConfig) -> Scene:
    sc = config.scene
    return generate_scene(
        (config.area.lower, config.area.upper),
        sc.bs_position,
        n_scatterers=sc.n_scatterers,
        pathloss_exponent=sc.pathloss_exponent,
        seed=sc.seed,
        shadowing_db=sc.shadowing_db,
        margin=sc.margin,
    )


def _axis(lo: float, hi: float, spacing: float) -> np.ndarray:
    if spacing > hi - lo:
        raise ConfigurationError(f"grid spacing {spacing} m exceeds the area extent {hi - lo} m")
    count = int(np.floor((hi - lo) / spacing + 1e-9)) + 1
    return lo + spacing * np.arange(count)


def grid_positions(config: ExperimentConfig) -> np.ndarray:
    """Reference points on every plane, boundaries included."""
    area = config.area
    xs = _axis(*area.x_range, area.grid_spacing)
    ys = _axis(*area.y_range, area.grid_spacing)
    return np.array([(x, y, z) for z in area.planes for x in xs for y in ys])


def test_positions(config: ExperimentConfig) -> np.ndarray:
    area = config.area
    rng = np.random.default_rng([config.seed, _TEST_POSITIONS])
    n = area.test_points
    planes = np.asarray(area.planes)[rng.integers(0, len(area.planes), size=n)]
    xs = rng.uniform(*area.x_range, size=n)
    ys = rng.uniform(*area.y_range, size=n)
    return np.column_stack([xs, ys, planes])


def _filtered(omega: np.ndarray, config: ExperimentConfig, kind: FingerprintKind) -> np.ndarray:
    fp = config.fingerprint
    if kind is FingerprintKind.ADCPM and fp.snr_db is not None and fp.denoise_alpha > 0:
        return denoise(omega, fp.denoise_alpha)
    return omega


def _training_fingerprint(config: ExperimentConfig, scene: Scene, position: np.ndarray, i: int,
                          kind: FingerprintKind) -> np.ndarray:
    paths = paths_for_position(scene, position, config.ofdm, config.scene.snap_delays)
    if kind is FingerprintKind.ADCPM:
        return adcpm_exact(paths, config.geometry, config.ofdm).omega
    rng = np.random.default_rng([config.seed, _TRAIN_FINGERPRINTS, i])
    return monte_carlo_power(paths, config.geometry, config.ofdm, config.fingerprint.realizations, rng, kind).omega


def training_set(config: ExperimentConfig, scene: Scene | None = None) -> Dataset:
    scene = scene if scene is not None else build_scene(config)
    kind = FingerprintKind(config.fingerprint.kind)
    positions = grid_positions(config)
    omegas = np.stack([
        _filtered(_training_fingerprint(config, scene, p, i, kind), config, kind)
        for i, p in enumerate(positions)
    ])
    logger.info("Training set: %d reference points, %s fingerprints %s", len(positions), kind.value, omegas.shape[1:])
    return Dataset(omegas, positions, kind, config.geometry.M, config.geometry.N, "train",
                   {"config_hash": config.config_hash(), "seed": config.seed})


def test_set(config: ExperimentConfig, scene: Scene | None = None) -> Dataset:
    scene = scene if scene is not None else build_scene(config)
    kind = FingerprintKind(config.fingerprint.kind)
    fp = config.fingerprint
    positions = test_positions(config)
    omegas = []
    for i, p in enumerate(positions):
        rng = np.random.default_rng([config.seed, _TEST_FINGERPRINTS, i])
        paths = paths_for_position(scene, p, config.ofdm, config.scene.snap_delays)
        omega = monte_carlo_power(paths, config.geometry, config.ofdm, fp.realizations, rng, kind, fp.snr_db).omega
        omegas.append(_filtered(omega, config, kind))
    logger.info(
        "Test set: %d points, %d realizations each, SNR %s",
        len(positions), fp.realizations, "noiseless" if fp.snr_db is None else f"{fp.snr_db:g} dB",
    )
    return Dataset(np.stack(omegas), positions, kind, config.geometry.M, config.geometry.N, "test",
                   {"config_hash": config.config_hash(), "seed": config.seed})


def generate_dataset(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    scene = build_scene(config)
    return training_set(config, scene), test_set(config, scene)
