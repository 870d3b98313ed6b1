"""Single-bounce scatterer scenes with spatial consistency.

Every user position in a scene sees the same scatterers, so neighbouring
positions share path angles and differ only smoothly in delay and power.
"""

import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.errors import ConfigurationError, GuardIntervalError
from app.models.system import SPEED_OF_LIGHT, OFDMConfig
from channel_app import PathParam, PathSet

logger = logging.getLogger(__name__)

Vector3 = tuple[float, float, float]


class Box(BaseModel):
    """Axis-aligned box in meters."""

    lower: Vector3
    upper: Vector3

    @model_validator(mode="after")
    def _non_empty(self) -> "Box":
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"empty box {self.lower} .. {self.upper}")
        return self

    def contains(self, point, tol: float = 1e-9) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(p >= np.asarray(self.lower) - tol) and np.all(p <= np.asarray(self.upper) + tol))


class Scatterer(BaseModel):
    pos: Vector3
    gain_db: float


class Scene(BaseModel):
    """Scatterer layout around a positioning area; serialized as JSON."""

    bs_position: Vector3
    scatterers: list[Scatterer] = Field(min_length=1)
    bounds: Box
    pathloss_exponent: float = 2.0
    seed: int = 0

    def scatterer_positions(self) -> np.ndarray:
        return np.array([s.pos for s in self.scatterers], dtype=np.float64)

    def scatterer_gains_db(self) -> np.ndarray:
        return np.array([s.gain_db for s in self.scatterers], dtype=np.float64)


def generate_scene(
    bounds: Box | tuple[Vector3, Vector3],
    bs_position: Vector3,
    n_scatterers: int = 50,
    pathloss_exponent: float = 2.0,
    seed: int = 0,
    shadowing_db: float = 6.0,
    margin: float = 30.0,
) -> Scene:
    """Scatter ``n_scatterers`` points uniformly in *bounds* grown by *margin* meters.

    Horizontal axes grow on both sides, the vertical axis only upwards.
    Gains are lognormal: ``gain_db ~ N(0, shadowing_db²)``.
    """
    if n_scatterers < 1:
        raise ConfigurationError(f"n_scatterers must be >= 1, got {n_scatterers}")
    if not isinstance(bounds, Box):
        try:
            bounds = Box(lower=bounds[0], upper=bounds[1])
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc

    lower = np.array(bounds.lower) - np.array([margin, margin, 0.0])
    upper = np.array(bounds.upper) + np.array([margin, margin, margin])
    rng = np.random.default_rng(seed)
    positions = rng.uniform(lower, upper, size=(n_scatterers, 3))
    gains_db = rng.normal(0.0, shadowing_db, size=n_scatterers)

    scatterers = [
        Scatterer(pos=tuple(float(v) for v in pos), gain_db=float(g))
        for pos, g in zip(positions, gains_db)
    ]
    logger.debug("Generated scene with %d scatterers (seed=%d)", n_scatterers, seed)
    return Scene(
        bs_position=tuple(float(v) for v in bs_position),
        scatterers=scatterers,
        bounds=bounds,
        pathloss_exponent=pathloss_exponent,
        seed=seed,
    )


def arrival_angles(scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    """Elevation and azimuth of every scatterer seen from the base station.

    Elevation is measured from the vertical axis, azimuth from the array row
    axis (y), both in [0, π].
    """
    u = scene.scatterer_positions() - np.asarray(scene.bs_position)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    theta = np.arccos(np.clip(u[:, 2], -1.0, 1.0))
    sin_theta = np.sin(theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_phi = np.where(sin_theta > 1e-12, u[:, 1] / sin_theta, 0.0)
    phi = np.arccos(np.clip(cos_phi, -1.0, 1.0))
    return theta, phi


def paths_for_position(
    scene: Scene,
    position,
    ofdm: OFDMConfig,
    snap_delays: bool = False,
) -> PathSet:
    """One path per scatterer for the user at *position*.

    Powers follow ``10^(gain_db/10) · length^(-pathloss_exponent)`` and are
    normalized to unit total after paths beyond the guard are dropped.
    """
    position = np.asarray(position, dtype=np.float64)
    if not scene.bounds.contains(position):
        raise ConfigurationError(f"position {position.tolist()} lies outside the scene bounds")

    scat = scene.scatterer_positions()
    to_user = np.linalg.norm(scat - position, axis=1)
    to_bs = np.linalg.norm(scat - np.asarray(scene.bs_position), axis=1)
    length = to_user + to_bs
    r = length / (SPEED_OF_LIGHT * ofdm.Ts)
    if snap_delays:
        r = np.rint(r)

    keep = r < ofdm.Ng
    if not keep.any():
        raise GuardIntervalError(
            f"all {len(r)} paths exceed the guard (min delay {r.min():.2f} samples, Ng={ofdm.Ng}); "
            "increase Ng"
        )
    if not keep.all():
        logger.debug("Dropping %d of %d paths beyond the guard interval", (~keep).sum(), len(r))

    power = 10.0 ** (scene.scatterer_gains_db() / 10.0) * length ** (-scene.pathloss_exponent)
    power = power[keep] / power[keep].sum()
    theta, phi = arrival_angles(scene)

    paths = tuple(
        PathParam(theta=float(t), phi=float(p), r=float(d), sigma2=float(s))
        for t, p, d, s in zip(theta[keep], phi[keep], r[keep], power)
    )
    return PathSet(paths=paths, position=tuple(float(v) for v in position))


def save_scene(scene: Scene, path: Path) -> None:
    Path(path).write_text(scene.model_dump_json(indent=2))


def load_scene(path: Path) -> Scene:
    return Scene.model_validate_json(Path(path).read_text())
