"""Network builders: refinement module, inception blocks, 3-D CNN and the 2-D baseline."""

import logging

import numpy as np

from app.errors import ShapeChainError
from model_app.layers import (
    CNA,
    AvgPool,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool,
    Network,
    Parallel,
    Sequential,
    TargetScaling,
)
from model_app.spec import Network2DSpec, NetworkSpec

logger = logging.getLogger(__name__)

POINTWISE = (1, 1, 1)


def _check_chain(layer: Layer, shape) -> tuple:
    try:
        return layer.infer_shape(shape)
    except ShapeChainError:
        logger.error("Shape chain failed in %s for input %s", layer.name, shape)
        raise


def build_refinement(
    spec: NetworkSpec,
    rng: np.random.Generator | None = None,
    dtype=np.float32,
    in_channels: int = 1,
) -> Sequential:
    """Two delay-heavy branches (horizontal-angle × delay, vertical-angle × delay), merged.

    Each branch stacks ``branch_layers`` CNA layers and a max pool; the
    concatenation passes one symmetric CNA layer and a second max pool.
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)

    def branch(side: str, kernel) -> Sequential:
        layers: list[Layer] = []
        channels = in_channels
        for i in range(spec.branch_layers):
            layers.append(CNA(f"refinement.{side}.cna{i}", channels, spec.branch_channels, kernel, rng, dtype))
            channels = spec.branch_channels
        layers.append(MaxPool(f"refinement.{side}.pool", spec.branch_pool))
        return Sequential(f"refinement.{side}", layers)

    module = Sequential("refinement", [
        Parallel("refinement.branches", [branch("left", spec.left_kernel), branch("right", spec.right_kernel)]),
        CNA("refinement.merge", 2 * spec.branch_channels, spec.merge_channels, spec.merge_kernel, rng, dtype),
        MaxPool("refinement.pool", spec.merge_pool),
    ])
    _check_chain(module, (*spec.input_dims, in_channels))
    return module


def build_inception3d(
    n: int,
    in_channels: int,
    base: int = 8,
    kernel=(3, 3, 3),
    rng: np.random.Generator | None = None,
    dtype=np.float32,
    name: str = "inception",
) -> Parallel:
    """Four branches of width ``n * base``: 1×1×1; reduce + conv; reduce + two convs; avg pool + 1×1×1."""
    if n < 1:
        raise ShapeChainError(name, f"inception factor must be >= 1, got {n}")
    rng = rng if rng is not None else np.random.default_rng(0)
    width = n * base
    return Parallel(name, [
        CNA(f"{name}.a", in_channels, width, POINTWISE, rng, dtype),
        Sequential(f"{name}.b", [
            CNA(f"{name}.b.reduce", in_channels, width, POINTWISE, rng, dtype),
            CNA(f"{name}.b.conv", width, width, kernel, rng, dtype),
        ]),
        Sequential(f"{name}.c", [
            CNA(f"{name}.c.reduce", in_channels, width, POINTWISE, rng, dtype),
            CNA(f"{name}.c.conv0", width, width, kernel, rng, dtype),
            CNA(f"{name}.c.conv1", width, width, kernel, rng, dtype),
        ]),
        Sequential(f"{name}.d", [
            AvgPool(f"{name}.d.pool", kernel, POINTWISE, "same"),
            CNA(f"{name}.d.proj", in_channels, width, POINTWISE, rng, dtype),
        ]),
    ])


def _head(in_features: int, rng, dtype) -> list[Layer]:
    return [
        GlobalAvgPool("head.gap"),
        Linear("head.linear", in_features, 3, rng, dtype),
        TargetScaling("head.scaling", 3, dtype),
    ]


def build_3dcnn(spec: NetworkSpec, dtype=np.float32) -> Network:
    """refinement → inception → pool → inception → inception → pool → GAP → linear."""
    rng = np.random.default_rng(spec.seed)
    n1, n2, n3 = spec.inception_factors
    width = 4 * spec.inception_base
    layers: list[Layer] = [
        build_refinement(spec, rng, dtype),
        build_inception3d(n1, spec.merge_channels, spec.inception_base, spec.inception_kernel, rng, dtype, "inception1"),
        MaxPool("stage.pool", spec.stage_pool),
        build_inception3d(n2, n1 * width, spec.inception_base, spec.inception_kernel, rng, dtype, "inception2"),
        build_inception3d(n3, n2 * width, spec.inception_base, spec.inception_kernel, rng, dtype, "inception3"),
        MaxPool("final.pool", spec.final_pool),
        *_head(n3 * width, rng, dtype),
    ]
    return Network(Sequential("cnn3d", layers), (*spec.input_dims, 1), "cnn3d", spec)


def build_miniature_3dcnn(spec: NetworkSpec, dtype=np.float64) -> Network:
    """Refinement, one inception block and the head; used for end-to-end gradient checks."""
    rng = np.random.default_rng(spec.seed)
    n1 = spec.inception_factors[0]
    layers: list[Layer] = [
        build_refinement(spec, rng, dtype),
        build_inception3d(n1, spec.merge_channels, spec.inception_base, spec.inception_kernel, rng, dtype, "inception1"),
        *_head(n1 * 4 * spec.inception_base, rng, dtype),
    ]
    return Network(Sequential("cnn3d-mini", layers), (*spec.input_dims, 1), "cnn3d-mini", spec)


def build_2dcnn(spec: Network2DSpec, dtype=np.float32) -> Network:
    """CNA / max-pool chain on the MN × Ng image with 2-D inception blocks ("same" pooling)."""
    rng = np.random.default_rng(spec.seed)
    (k1, k2, k3), (c1, c2, c3) = spec.conv_kernels, spec.conv_channels
    s, p, fp, ik = spec.pool_stride, spec.pool_window, spec.final_pool_window, spec.inception_kernel
    n1, n2, n3 = spec.inception_factors
    width = 4 * spec.inception_base
    pool = (p, p, 1)
    stride = (s, s, 1)
    kernel = (ik, ik, 1)
    layers: list[Layer] = [
        CNA("conv1", 1, c1, (k1, k1, 1), rng, dtype),
        MaxPool("pool1", pool, stride, "same"),
        CNA("conv2", c1, c2, (k2, k2, 1), rng, dtype),
        CNA("conv3", c2, c3, (k3, k3, 1), rng, dtype),
        MaxPool("pool2", pool, stride, "same"),
        build_inception3d(n1, c3, spec.inception_base, kernel, rng, dtype, "inception1"),
        MaxPool("pool3", pool, stride, "same"),
        build_inception3d(n2, n1 * width, spec.inception_base, kernel, rng, dtype, "inception2"),
        build_inception3d(n3, n2 * width, spec.inception_base, kernel, rng, dtype, "inception3"),
        MaxPool("pool4", (fp, fp, 1), stride, "same"),
        *_head(n3 * width, rng, dtype),
    ]
    return Network(Sequential("cnn2d", layers), (*spec.input_dims, 1, 1), "cnn2d", spec)
