"""Declarative, serializable network specifications.

Builders take a spec literally and refuse shapes that do not chain; the
``for_input`` / ``scaled_for`` constructors derive a spec that fits a
given input.
"""

import logging
from typing import Annotated

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

PositiveInt = Annotated[int, Field(ge=1)]
Triple = tuple[PositiveInt, PositiveInt, PositiveInt]

FULL_IMAGE_SIZE = 128


def _largest_odd(limit: int) -> int:
    return limit if limit % 2 else max(limit - 1, 1)


def _fit_kernel(kernel, dims) -> tuple[int, int, int]:
    return tuple(min(k, _largest_odd(d)) for k, d in zip(kernel, dims))


def _fit_pool(pool, dims) -> tuple[int, int, int]:
    return tuple(min(s, d) for s, d in zip(pool, dims))


def _pooled(dims, pool) -> tuple[int, int, int]:
    return tuple((d - s) // s + 1 for d, s in zip(dims, pool))


def nearest_odd(value: float) -> int:
    return max(1, 2 * int((value - 1) / 2 + 0.5) + 1)


class NetworkSpec(BaseModel):
    """3-D CNN: two-branch refinement, three inception stages, regression head.

    Axes are (vertical angle M, horizontal angle N, delay Ng).  Pools use
    window = stride.
    """

    model_config = ConfigDict(frozen=True)

    input_dims: Triple = (4, 8, 32)
    branch_channels: PositiveInt = 8
    branch_layers: PositiveInt = 2
    left_kernel: Triple = (1, 3, 7)
    right_kernel: Triple = (3, 1, 7)
    branch_pool: Triple = (1, 1, 2)
    merge_kernel: Triple = (3, 3, 3)
    merge_channels: PositiveInt = 16
    merge_pool: Triple = (1, 2, 2)
    inception_factors: tuple[PositiveInt, PositiveInt, PositiveInt] = (1, 2, 4)
    inception_base: PositiveInt = 8
    inception_kernel: Triple = (3, 3, 3)
    stage_pool: Triple = (1, 1, 2)
    final_pool: Triple = (2, 2, 2)
    weight_decay: float = Field(default=1e-4, ge=0)
    seed: int = 0

    @field_validator("left_kernel", "right_kernel", "merge_kernel", "inception_kernel")
    @classmethod
    def _odd(cls, kernel):
        if any(k % 2 == 0 for k in kernel):
            raise ValueError(f"kernel extents must be odd, got {kernel}")
        return kernel

    @model_validator(mode="after")
    def _delay_heavy_branches(self) -> "NetworkSpec":
        # left spans (horizontal, delay), right spans (vertical, delay)
        if self.left_kernel[2] <= self.left_kernel[1] or self.right_kernel[2] <= self.right_kernel[0]:
            raise ValueError("branch kernels must extend further along delay than along angle")
        return self

    def for_input(self, M: int, N: int, Ng: int) -> "NetworkSpec":
        """Copy with kernels and pools shrunk wherever an axis is too short for them."""
        dims = (M, N, Ng)
        left = _fit_kernel(self.left_kernel, dims)
        right = _fit_kernel(self.right_kernel, dims)
        branch_pool = _fit_pool(self.branch_pool, dims)
        dims = _pooled(dims, branch_pool)
        merge_kernel = _fit_kernel(self.merge_kernel, dims)
        merge_pool = _fit_pool(self.merge_pool, dims)
        dims = _pooled(dims, merge_pool)
        stage_pool = _fit_pool(self.stage_pool, dims)
        second_stage = _pooled(dims, stage_pool)
        inception_kernel = _fit_kernel(self.inception_kernel, second_stage)
        final_pool = _fit_pool(self.final_pool, second_stage)

        fitted = self.model_copy(update=dict(
            input_dims=(M, N, Ng),
            left_kernel=left,
            right_kernel=right,
            branch_pool=branch_pool,
            merge_kernel=merge_kernel,
            merge_pool=merge_pool,
            inception_kernel=inception_kernel,
            stage_pool=stage_pool,
            final_pool=final_pool,
        ))
        if fitted != self.model_copy(update=dict(input_dims=(M, N, Ng))):
            logger.info("Adapted network spec to input %dx%dx%d", M, N, Ng)
        # model_copy skips validation
        return NetworkSpec.model_validate(fitted.model_dump())


class Network2DSpec(BaseModel):
    """2-D CNN baseline on the MN × Ng matrix, one CNA/pool chain.

    Defaults are the full-scale layer list; :meth:`scaled_for` shrinks
    kernels and pool windows for smaller images.
    """

    model_config = ConfigDict(frozen=True)

    input_dims: tuple[PositiveInt, PositiveInt] = (FULL_IMAGE_SIZE, FULL_IMAGE_SIZE)
    conv_kernels: tuple[PositiveInt, PositiveInt, PositiveInt] = (15, 7, 5)
    conv_channels: tuple[PositiveInt, PositiveInt, PositiveInt] = (32, 64, 128)
    pool_window: PositiveInt = 5
    final_pool_window: PositiveInt = 3
    pool_stride: PositiveInt = 2
    inception_factors: tuple[PositiveInt, PositiveInt, PositiveInt] = (1, 2, 4)
    inception_base: PositiveInt = 64
    inception_kernel: PositiveInt = 3
    kernel_scale: float = Field(default=1.0, gt=0)
    weight_decay: float = Field(default=1e-4, ge=0)
    seed: int = 0

    @field_validator("conv_kernels")
    @classmethod
    def _odd(cls, kernels):
        if any(k % 2 == 0 for k in kernels):
            raise ValueError(f"kernel extents must be odd, got {kernels}")
        return kernels

    @field_validator("inception_kernel")
    @classmethod
    def _odd_inception(cls, k):
        if k % 2 == 0:
            raise ValueError(f"inception kernel must be odd, got {k}")
        return k

    @classmethod
    def scaled_for(cls, height: int, width: int, **overrides) -> "Network2DSpec":
        """Scale kernels by ``s = min(H, W) / 128`` (capped at 1).

        Conv kernels become the nearest odd integer to ``k·s``; pool windows
        ``max(2, round(k·s))``; the inception kernel is clipped to the
        shortest axis it meets.
        """
        base = cls(**overrides)
        s = min(1.0, min(height, width) / FULL_IMAGE_SIZE)
        pool = max(2, round(base.pool_window * s))
        final_pool = max(2, round(base.final_pool_window * s))

        # inception stages two and three run after three stride-2 pools
        shortest = min(height, width)
        for _ in range(3):
            shortest = -(-shortest // base.pool_stride)
        return cls.model_validate({
            **base.model_dump(),
            "input_dims": (height, width),
            "conv_kernels": tuple(nearest_odd(k * s) for k in base.conv_kernels),
            "pool_window": pool,
            "final_pool_window": final_pool,
            "inception_kernel": min(base.inception_kernel, _largest_odd(shortest)),
            "kernel_scale": s,
        })
