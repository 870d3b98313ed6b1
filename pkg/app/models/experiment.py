"""Experiment configuration: one JSON document, every field defaulted to desk scale."""

import hashlib
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.errors import ConfigurationError
from app.models.system import ArrayGeometry, OFDMConfig
from model_app.spec import Network2DSpec, NetworkSpec

logger = logging.getLogger(__name__)

Vector3 = tuple[float, float, float]


class Method(str, Enum):
    CNN3D = "cnn3d"
    CNN2D = "cnn2d"
    WKNN = "wknn"


class SceneConfig(BaseModel):
    n_scatterers: int = Field(default=50, ge=1)
    pathloss_exponent: float = 2.0
    shadowing_db: float = Field(default=6.0, ge=0)
    margin: float = Field(default=30.0, ge=0)
    bs_position: Vector3 = (-100.0, 0.0, 25.0)
    snap_delays: bool = False
    seed: int = 0


class AreaConfig(BaseModel):
    """Positioning area: an x/y rectangle from the ground up to ``height``, sampled on horizontal planes."""

    x_range: tuple[float, float] = (0.0, 10.0)
    y_range: tuple[float, float] = (-5.0, 5.0)
    height: float = Field(default=9.0, gt=0)
    planes: tuple[float, ...] = (1.5, 4.5, 7.5)
    grid_spacing: float = Field(default=1.0, gt=0)
    test_points: int = Field(default=200, ge=1)

    @model_validator(mode="after")
    def _planes_inside(self) -> "AreaConfig":
        if self.x_range[1] <= self.x_range[0] or self.y_range[1] <= self.y_range[0]:
            raise ValueError(f"empty area {self.x_range} x {self.y_range}")
        if not self.planes:
            raise ValueError("at least one plane height is required")
        if any(not 0 <= z <= self.height for z in self.planes):
            raise ValueError(f"plane heights {self.planes} must lie within [0, {self.height}]")
        return self

    @property
    def lower(self) -> Vector3:
        return (self.x_range[0], self.y_range[0], 0.0)

    @property
    def upper(self) -> Vector3:
        return (self.x_range[1], self.y_range[1], self.height)


class FingerprintConfig(BaseModel):
    kind: str = Field(default="adcpm", pattern="^(adcpm|sfcpm)$")
    realizations: int = Field(default=100, ge=1)
    snr_db: Optional[float] = None
    denoise_alpha: float = Field(default=0.02, ge=0, le=1)


class TrainingConfig(BaseModel):
    epochs: int = Field(default=200, ge=1)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    seed: int = 0
    log_every: int = Field(default=10, ge=0)


class SweepConfig(BaseModel):
    snr_db: tuple[float, ...] = (4.0, 8.0, 12.0, 16.0, 20.0)
    layouts: tuple[tuple[int, int], ...] = ((4, 8), (2, 16), (8, 4), (1, 32))
    bandwidths_mhz: tuple[float, ...] = (5.0, 10.0, 20.0)
    methods: tuple[Method, ...] = (Method.WKNN, Method.CNN3D, Method.CNN2D)
    latency_queries: int = Field(default=100, ge=1)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(use_enum_values=False)

    scene: SceneConfig = SceneConfig()
    geometry: ArrayGeometry = ArrayGeometry()
    ofdm: OFDMConfig = OFDMConfig()
    area: AreaConfig = AreaConfig()
    fingerprint: FingerprintConfig = FingerprintConfig()
    method: Method = Method.CNN3D
    wknn_k: int = Field(default=4, ge=1)
    network: NetworkSpec = NetworkSpec()
    network2d: Network2DSpec = Network2DSpec()
    training: TrainingConfig = TrainingConfig()
    sweep: SweepConfig = SweepConfig()
    seed: int = 0

    def fingerprint_columns(self) -> int:
        return self.ofdm.Ng if self.fingerprint.kind == "adcpm" else self.ofdm.Nc

    def network_spec(self) -> NetworkSpec:
        """3-D CNN spec fitted to this geometry and fingerprint width."""
        return self.network.for_input(self.geometry.M, self.geometry.N, self.fingerprint_columns())

    def network2d_spec(self) -> Network2DSpec:
        return Network2DSpec.scaled_for(
            self.geometry.antennas, self.fingerprint_columns(), **self.network2d.model_dump()
        )

    @property
    def full_scale(self) -> bool:
        return self.geometry.antennas >= 128 or self.ofdm.Ng >= 128

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_updates(self, **updates: Any) -> "ExperimentConfig":
        """Validated copy with top-level sections replaced."""
        return ExperimentConfig.model_validate({**self.model_dump(), **updates})


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.path=value`` assignments; values are JSON, falling back to strings."""
    for item in overrides:
        path, sep, raw = item.partition("=")
        if not sep or not path:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        node = data
        *parents, leaf = path.split(".")
        for key in parents:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {item!r} descends into a non-object")
        node[leaf] = _parse_value(raw)
    return data


def load_experiment_config(path: Optional[Path], overrides: list[str] | None = None) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"config {path} must hold a JSON object")
    data = apply_overrides(data, overrides or [])
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from exc
    if config.full_scale:
        logger.warning("Full-scale configuration: expect long CPU runtimes")
    return config
