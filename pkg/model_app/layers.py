"""Stateful layer graph on top of :mod:`nn_app.ops`.

Layers carry their own parameters, gradients and forward caches.  Shapes
are checked once, at build time, through ``infer_shape``; a layer that
cannot accept its input raises :class:`ShapeChainError` with its name.
"""

import logging
from typing import Iterator

import numpy as np

from app.errors import DimensionMismatchError, ShapeChainError
from nn_app import ops

logger = logging.getLogger(__name__)

Shape = tuple[int, ...]


class Layer:
    def __init__(self, name: str) -> None:
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    # parameters subject to weight decay
    decayed: tuple[str, ...] = ()

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def set_buffer(self, key: str, value: np.ndarray) -> None:
        raise KeyError(f"{self.name} has no buffer {key!r}")

    def children(self) -> list["Layer"]:
        return []

    def infer_shape(self, shape: Shape) -> Shape:
        return shape

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _require_volume(self, shape: Shape) -> None:
        if len(shape) != 4:
            raise ShapeChainError(self.name, f"expects an (H, W, L, C) input, got {shape}")


class Sequential(Layer):
    def __init__(self, name: str, layers: list[Layer]) -> None:
        super().__init__(name)
        self.layers = layers

    def children(self) -> list[Layer]:
        return self.layers

    def infer_shape(self, shape: Shape) -> Shape:
        for layer in self.layers:
            shape = layer.infer_shape(shape)
        return shape

    def forward(self, x, training):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


class Parallel(Layer):
    """Branches fed the same input; outputs concatenated along channels in branch order."""

    def __init__(self, name: str, branches: list[Layer]) -> None:
        super().__init__(name)
        self.branches = branches

    def children(self) -> list[Layer]:
        return self.branches

    def infer_shape(self, shape: Shape) -> Shape:
        outputs = [branch.infer_shape(shape) for branch in self.branches]
        spatial = {out[:3] for out in outputs}
        if len(spatial) != 1:
            raise ShapeChainError(self.name, f"branch outputs disagree spatially: {sorted(spatial)}")
        return (*outputs[0][:3], sum(out[3] for out in outputs))

    def forward(self, x, training):
        out, self._cache = ops.concat_channels([b.forward(x, training) for b in self.branches])
        return out

    def backward(self, grad):
        parts = ops.split_channels(grad, self._cache)
        return sum(b.backward(g) for b, g in zip(self.branches, parts))


class Conv3D(Layer):
    decayed = ("kernel",)

    def __init__(self, name, in_channels, out_channels, kernel_shape, rng, dtype=np.float32) -> None:
        super().__init__(name)
        fan_in = int(np.prod(kernel_shape)) * in_channels
        bound = np.sqrt(6.0 / fan_in)
        shape = (*kernel_shape, in_channels, out_channels)
        self.params["kernel"] = rng.uniform(-bound, bound, size=shape).astype(dtype)

    @property
    def kernel(self) -> np.ndarray:
        return self.params["kernel"]

    def infer_shape(self, shape):
        self._require_volume(shape)
        *spatial, channels = shape
        if channels != self.kernel.shape[3]:
            raise ShapeChainError(self.name, f"expects {self.kernel.shape[3]} channels, got {channels}")
        if any(k > d for k, d in zip(self.kernel.shape[:3], spatial)):
            raise ShapeChainError(
                self.name, f"kernel {self.kernel.shape[:3]} is larger than input {tuple(spatial)}"
            )
        return (*spatial, self.kernel.shape[4])

    def forward(self, x, training):
        out, self._cache = ops.conv3d_forward(x, self.kernel)
        return out

    def backward(self, grad):
        grad_x, self.grads["kernel"] = ops.conv3d_backward(grad, self._cache)
        return grad_x


class BatchNorm(Layer):
    def __init__(self, name, channels, dtype=np.float32, momentum=0.9, epsilon=1e-5) -> None:
        super().__init__(name)
        self.state = ops.BNState.create(channels, dtype=dtype, momentum=momentum, epsilon=epsilon)
        self.params["gamma"] = self.state.gamma
        self.params["beta"] = self.state.beta

    def buffers(self):
        return {"running_mean": self.state.running_mean, "running_var": self.state.running_var}

    def set_buffer(self, key, value):
        if key not in ("running_mean", "running_var"):
            super().set_buffer(key, value)
        setattr(self.state, key, value)

    def infer_shape(self, shape):
        self._require_volume(shape)
        if shape[3] != self.state.channels:
            raise ShapeChainError(self.name, f"expects {self.state.channels} channels, got {shape[3]}")
        return shape

    def forward(self, x, training):
        self.state.training = training
        out, self._cache = ops.bn_forward(x, self.state)
        return out

    def backward(self, grad):
        grad_x, self.grads["gamma"], self.grads["beta"] = ops.bn_backward(grad, self._cache)
        return grad_x


class ReLU(Layer):
    def forward(self, x, training):
        out, self._cache = ops.relu(x)
        return out

    def backward(self, grad):
        return ops.relu_backward(grad, self._cache)


class CNA(Sequential):
    """Bias-free convolution, batch normalization, ReLU."""

    def __init__(self, name, in_channels, out_channels, kernel_shape, rng, dtype=np.float32) -> None:
        super().__init__(name, [
            Conv3D(f"{name}.conv", in_channels, out_channels, kernel_shape, rng, dtype),
            BatchNorm(f"{name}.bn", out_channels, dtype),
            ReLU(f"{name}.relu"),
        ])
        self.out_channels = out_channels


class _Pool(Layer):
    def __init__(self, name, size, stride=None, padding: ops.Padding = "valid") -> None:
        super().__init__(name)
        self.size = tuple(size)
        self.stride = tuple(stride) if stride is not None else self.size
        self.padding = padding

    def infer_shape(self, shape):
        self._require_volume(shape)
        try:
            out, _ = ops.pool_geometry(shape[:3], self.size, self.stride, self.padding)
        except ValueError as exc:
            raise ShapeChainError(self.name, str(exc)) from exc
        return (*out, shape[3])


class MaxPool(_Pool):
    def forward(self, x, training):
        out, self._cache = ops.maxpool3d(x, self.size, self.stride, self.padding)
        return out

    def backward(self, grad):
        return ops.maxpool3d_backward(grad, self._cache)


class AvgPool(_Pool):
    def forward(self, x, training):
        out, self._cache = ops.avgpool3d(x, self.size, self.stride, self.padding)
        return out

    def backward(self, grad):
        return ops.avgpool3d_backward(grad, self._cache)


class GlobalAvgPool(Layer):
    def infer_shape(self, shape):
        self._require_volume(shape)
        if min(shape[:3]) < 1:
            raise ShapeChainError(self.name, f"empty volume {shape}")
        return (shape[3],)

    def forward(self, x, training):
        out, self._cache = ops.global_avg_pool(x)
        return out

    def backward(self, grad):
        return ops.global_avg_pool_backward(grad, self._cache)


class Linear(Layer):
    decayed = ("weight",)

    def __init__(self, name, in_features, out_features, rng, dtype=np.float32) -> None:
        super().__init__(name)
        bound = np.sqrt(6.0 / in_features)
        self.params["weight"] = rng.uniform(-bound, bound, size=(in_features, out_features)).astype(dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def infer_shape(self, shape):
        if shape != (self.params["weight"].shape[0],):
            raise ShapeChainError(
                self.name, f"expects a vector of {self.params['weight'].shape[0]} features, got {shape}"
            )
        return (self.params["weight"].shape[1],)

    def forward(self, x, training):
        out, self._cache = ops.linear(x, self.params["weight"], self.params["bias"])
        return out

    def backward(self, grad):
        grad_x, self.grads["weight"], self.grads["bias"] = ops.linear_backward(grad, self._cache)
        return grad_x


class TargetScaling(Layer):
    """Fixed affine map from normalized outputs to meters (``y * scale + offset``)."""

    def __init__(self, name, features: int = 3, dtype=np.float32) -> None:
        super().__init__(name)
        self._offset = np.zeros(features, dtype=dtype)
        self._scale = np.ones(features, dtype=dtype)

    def buffers(self):
        return {"offset": self._offset, "scale": self._scale}

    def set_buffer(self, key, value):
        if key == "offset":
            self._offset = value
        elif key == "scale":
            self._scale = value
        else:
            super().set_buffer(key, value)

    def forward(self, x, training):
        return x * self._scale + self._offset

    def backward(self, grad):
        return grad * self._scale


def iter_leaves(layer: Layer) -> Iterator[Layer]:
    kids = layer.children()
    if not kids:
        yield layer
    for child in kids:
        yield from iter_leaves(child)


class Network:
    """Root layer plus the bookkeeping training and storage need."""

    def __init__(self, root: Layer, input_shape: Shape, kind: str, spec) -> None:
        self.root = root
        self.input_shape = tuple(input_shape)
        self.kind = kind
        self.spec = spec
        self.layer_shapes: list[tuple[str, Shape]] = []
        out = root.infer_shape(self.input_shape)
        if out != (3,):
            raise ShapeChainError(root.name, f"network must end in 3 outputs, got {out}")
        self._record_shapes()
        self.scaling = next(l for l in iter_leaves(root) if isinstance(l, TargetScaling))
        logger.debug("Built %s network with %d parameters", kind, self.parameter_count)

    def _record_shapes(self) -> None:
        def walk(layer: Layer, shape: Shape) -> Shape:
            if isinstance(layer, Sequential):
                for child in layer.layers:
                    shape = walk(child, shape)
                return shape
            out = layer.infer_shape(shape)
            self.layer_shapes.append((layer.name, out))
            return out

        walk(self.root, self.input_shape)

    def leaves(self) -> list[Layer]:
        return list(iter_leaves(self.root))

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.leaves() for k, v in l.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.leaves() for k, v in l.grads.items()}

    def decayed_keys(self) -> list[str]:
        return [f"{l.name}.{k}" for l in self.leaves() for k in l.decayed]

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.leaves() for k, v in l.buffers().items()}

    def set_buffers(self, values: dict[str, np.ndarray]) -> None:
        by_name = {l.name: l for l in self.leaves()}
        for key, value in values.items():
            layer_name, _, buffer = key.rpartition(".")
            by_name[layer_name].set_buffer(buffer, value)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def set_target_scaling(self, offset, scale) -> None:
        dtype = self.scaling.buffers()["offset"].dtype
        self.scaling.set_buffer("offset", np.asarray(offset, dtype=dtype))
        self.scaling.set_buffer("scale", np.asarray(scale, dtype=dtype))

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if tuple(x.shape[1:]) != self.input_shape:
            raise DimensionMismatchError(f"input of shape {x.shape[1:]} does not match {self.input_shape}")
        return self.root.forward(x, training)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return self.root.backward(grad)
