"""Pydantic models describing the antenna array and the OFDM numerology."""

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.constants import speed_of_light

SPEED_OF_LIGHT: float = speed_of_light  # m/s
DEFAULT_CARRIER_HZ: float = 2.0e9


class ArrayGeometry(BaseModel):
    """Uniform planar array: ``M`` antennas per column, ``N`` per row."""

    model_config = ConfigDict(frozen=True)

    M: int = Field(default=4, ge=1)
    N: int = Field(default=8, ge=1)
    lambda_c: float = Field(default=SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ, gt=0)
    d_v: Optional[float] = Field(default=None, gt=0)
    d_h: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _half_wavelength_spacing(self) -> "ArrayGeometry":
        # frozen model: fill defaults through object.__setattr__
        if self.d_v is None:
            object.__setattr__(self, "d_v", self.lambda_c / 2)
        if self.d_h is None:
            object.__setattr__(self, "d_h", self.lambda_c / 2)
        return self

    @property
    def antennas(self) -> int:
        return self.M * self.N


class OFDMConfig(BaseModel):
    """Subcarrier count, guard length (samples) and sample interval (seconds)."""

    model_config = ConfigDict(frozen=True)

    Nc: int = Field(default=128, ge=1)
    Ng: int = Field(default=32, ge=1)
    Ts: float = Field(default=50e-9, gt=0)

    @model_validator(mode="after")
    def _guard_fits_symbol(self) -> "OFDMConfig":
        if self.Ng > self.Nc:
            raise ValueError(f"guard length Ng={self.Ng} exceeds subcarrier count Nc={self.Nc}")
        return self

    @property
    def symbol_duration(self) -> float:
        return self.Nc * self.Ts

    @property
    def guard_duration(self) -> float:
        return self.Ng * self.Ts
