"""Functional layer primitives with hand-written adjoints.

Feature maps are 5-D arrays ``(batch, H, W, L, channels)``.  Every forward
returns ``(output, cache)``; the matching backward takes the upstream
gradient and that cache.  Dtypes follow the input: float64 for gradient
checks, float32 for training.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from app.errors import ConfigurationError, DimensionMismatchError

logger = logging.getLogger(__name__)

Padding = Literal["valid", "same"]
Triple = tuple[int, int, int]


def _spatial(x: np.ndarray) -> Triple:
    if x.ndim != 5:
        raise DimensionMismatchError(f"expected a (batch, H, W, L, channels) array, got shape {x.shape}")
    return x.shape[1], x.shape[2], x.shape[3]


# ── Convolution ──────────────────────────────────────────────────────────────

def conv_padding(kernel_shape: Triple) -> Triple:
    if any(k % 2 == 0 for k in kernel_shape):
        raise ConfigurationError(f"kernel extents must be odd for centered padding, got {kernel_shape}")
    return tuple((k - 1) // 2 for k in kernel_shape)


def conv3d_forward(x: np.ndarray, kernel: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Stride-1 cross-correlation with centered zero padding; spatial dims are preserved.

    ``kernel`` has shape (K1, K2, K3, P, Q); no bias.
    """
    H, W, L = _spatial(x)
    if kernel.ndim != 5 or kernel.shape[3] != x.shape[4]:
        raise DimensionMismatchError(
            f"kernel of shape {kernel.shape} does not accept {x.shape[4]} input channels"
        )
    p1, p2, p3 = conv_padding(kernel.shape[:3])
    xp = np.pad(x, ((0, 0), (p1, p1), (p2, p2), (p3, p3), (0, 0)))
    out = np.zeros((*x.shape[:4], kernel.shape[4]), dtype=np.result_type(x, kernel))
    for a, b, c in np.ndindex(*kernel.shape[:3]):
        out += xp[:, a:a + H, b:b + W, c:c + L, :] @ kernel[a, b, c]
    return out, (xp, kernel, (p1, p2, p3))


def conv3d_backward(grad_out: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray]:
    """Return (grad_input, grad_kernel)."""
    xp, kernel, (p1, p2, p3) = cache
    B, H, W, L, Q = grad_out.shape
    if Q != kernel.shape[4] or xp.shape[0] != B:
        raise DimensionMismatchError(f"gradient of shape {grad_out.shape} does not match the forward pass")
    P = kernel.shape[3]
    g2 = grad_out.reshape(-1, Q)
    grad_xp = np.zeros_like(xp)
    grad_kernel = np.empty_like(kernel)
    for a, b, c in np.ndindex(*kernel.shape[:3]):
        window = xp[:, a:a + H, b:b + W, c:c + L, :]
        grad_kernel[a, b, c] = window.reshape(-1, P).T @ g2
        grad_xp[:, a:a + H, b:b + W, c:c + L, :] += grad_out @ kernel[a, b, c].T
    grad_x = grad_xp[:, p1:p1 + H, p2:p2 + W, p3:p3 + L, :]
    return grad_x, grad_kernel


# ── Batch normalization ──────────────────────────────────────────────────────

@dataclass
class BNState:
    """Per-channel affine parameters and running statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5
    training: bool = True

    @classmethod
    def create(cls, channels: int, dtype=np.float64, **kwargs) -> "BNState":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            **kwargs,
        )

    @property
    def channels(self) -> int:
        return len(self.gamma)


@dataclass
class _BNCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    training: bool
    count: int = field(default=0)


def bn_forward(x: np.ndarray, state: BNState) -> tuple[np.ndarray, _BNCache]:
    """Normalize each channel over (batch, H, W, L).

    In training mode batch statistics are used and the running statistics
    move by ``momentum``; in inference the running statistics are used.
    """
    _spatial(x)
    if x.shape[4] != state.channels:
        raise DimensionMismatchError(f"{x.shape[4]} channels fed to a batch norm over {state.channels}")
    count = x.shape[0] * x.shape[1] * x.shape[2] * x.shape[3]
    if count == 0:
        raise ConfigurationError("batch norm needs a nonempty batch and spatial volume")

    if state.training:
        mean = x.mean(axis=(0, 1, 2, 3))
        var = x.var(axis=(0, 1, 2, 3))
        m = state.momentum
        state.running_mean = (m * state.running_mean + (1 - m) * mean).astype(state.running_mean.dtype)
        state.running_var = (m * state.running_var + (1 - m) * var).astype(state.running_var.dtype)
    else:
        mean, var = state.running_mean, state.running_var

    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (x - mean) * inv_std
    out = state.gamma * xhat + state.beta
    return out.astype(x.dtype, copy=False), _BNCache(xhat, inv_std, state.gamma, state.training, count)


def bn_backward(grad_out: np.ndarray, cache: _BNCache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (grad_input, grad_gamma, grad_beta); defined for training-mode passes only.

    The input gradient is the upstream gradient projected away from the
    channel mean and from ``xhat``, so its per-channel sum is zero.
    """
    if not cache.training:
        raise ConfigurationError("batch norm backward requires a training-mode forward pass")
    axes = (0, 1, 2, 3)
    grad_beta = grad_out.sum(axis=axes)
    grad_gamma = (grad_out * cache.xhat).sum(axis=axes)
    grad_x = (cache.gamma * cache.inv_std / cache.count) * (
        cache.count * grad_out - grad_beta - cache.xhat * grad_gamma
    )
    return grad_x.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


# ── Activation ───────────────────────────────────────────────────────────────

def relu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # the kink at exactly 0 gets gradient 0
    return grad_out * mask


# ── Pooling ──────────────────────────────────────────────────────────────────

def pool_geometry(spatial: Triple, size: Triple, stride: Triple, padding: Padding = "valid"):
    """Output dims and (before, after) padding per axis.

    ``valid`` truncates the tail (floor); ``same`` pads so the output is
    ``ceil(D / stride)``.
    """
    if any(s < 1 for s in size) or any(t < 1 for t in stride):
        raise ConfigurationError(f"pool size {size} and stride {stride} must be positive")
    out, pads = [], []
    for D, s, t in zip(spatial, size, stride):
        if padding == "valid":
            if D < s:
                raise DimensionMismatchError(f"pool window {size} does not fit input {spatial}")
            out.append((D - s) // t + 1)
            pads.append((0, 0))
        elif padding == "same":
            o = -(-D // t)
            total = max((o - 1) * t + s - D, 0)
            out.append(o)
            pads.append((total // 2, total - total // 2))
        else:
            raise ConfigurationError(f"unknown padding mode {padding!r}")
    return tuple(out), tuple(pads)


def _window_slices(out_dims: Triple, stride: Triple, offset: Triple):
    return tuple(
        slice(a, a + t * (o - 1) + 1, t) for a, t, o in zip(offset, stride, out_dims)
    )


def maxpool3d(
    x: np.ndarray, size: Triple, stride: Triple, padding: Padding = "valid"
) -> tuple[np.ndarray, tuple]:
    """Window maxima; ties keep the first cell in scan order.  The cache holds the argmax record."""
    out_dims, pads = pool_geometry(_spatial(x), size, stride, padding)
    xp = np.pad(x, ((0, 0), *pads, (0, 0)), constant_values=-np.inf)
    offsets = list(np.ndindex(*size))
    windows = np.stack([xp[(slice(None), *_window_slices(out_dims, stride, o))] for o in offsets])
    argmax = windows.argmax(axis=0)
    out = np.take_along_axis(windows, argmax[None], axis=0)[0]
    return out, (xp.shape, pads, size, stride, out_dims, argmax)


def maxpool3d_backward(grad_out: np.ndarray, cache: tuple) -> np.ndarray:
    """Scatter each output gradient onto its argmax cell."""
    xp_shape, pads, size, stride, out_dims, argmax = cache
    grad_xp = np.zeros(xp_shape, dtype=grad_out.dtype)
    for i, o in enumerate(np.ndindex(*size)):
        grad_xp[(slice(None), *_window_slices(out_dims, stride, o))] += grad_out * (argmax == i)
    crop = tuple(slice(lo, n - hi) for (lo, hi), n in zip(pads, xp_shape[1:4]))
    return grad_xp[(slice(None), *crop)]


def avgpool3d(
    x: np.ndarray, size: Triple, stride: Triple, padding: Padding = "valid"
) -> tuple[np.ndarray, tuple]:
    """Window means; padded cells are excluded from the count."""
    spatial = _spatial(x)
    out_dims, pads = pool_geometry(spatial, size, stride, padding)
    xp = np.pad(x, ((0, 0), *pads, (0, 0)))
    ones = np.pad(np.ones((1, *spatial, 1), dtype=x.dtype), ((0, 0), *pads, (0, 0)))
    sums = np.zeros((x.shape[0], *out_dims, x.shape[4]), dtype=x.dtype)
    counts = np.zeros((1, *out_dims, 1), dtype=x.dtype)
    for o in np.ndindex(*size):
        sl = (slice(None), *_window_slices(out_dims, stride, o))
        sums += xp[sl]
        counts += ones[sl]
    return sums / counts, (xp.shape, pads, size, stride, out_dims, counts)


def avgpool3d_backward(grad_out: np.ndarray, cache: tuple) -> np.ndarray:
    xp_shape, pads, size, stride, out_dims, counts = cache
    grad_xp = np.zeros(xp_shape, dtype=grad_out.dtype)
    share = grad_out / counts
    for o in np.ndindex(*size):
        grad_xp[(slice(None), *_window_slices(out_dims, stride, o))] += share
    crop = tuple(slice(lo, n - hi) for (lo, hi), n in zip(pads, xp_shape[1:4]))
    return grad_xp[(slice(None), *crop)]


def global_avg_pool(x: np.ndarray) -> tuple[np.ndarray, Triple]:
    """Per-channel spatial mean, shape (batch, channels)."""
    spatial = _spatial(x)
    if x.size == 0 or np.prod(spatial) == 0:
        raise ConfigurationError("global average pooling over an empty volume")
    return x.mean(axis=(1, 2, 3)), spatial


def global_avg_pool_backward(grad_out: np.ndarray, spatial: Triple) -> np.ndarray:
    B, C = grad_out.shape
    share = grad_out / float(np.prod(spatial))
    return np.broadcast_to(share[:, None, None, None, :], (B, *spatial, C)).copy()


# ── Channel concatenation ────────────────────────────────────────────────────

def concat_channels(inputs: list[np.ndarray]) -> tuple[np.ndarray, list[int]]:
    if not inputs:
        raise ConfigurationError("nothing to concatenate")
    head = inputs[0].shape[:4]
    for i, t in enumerate(inputs):
        if t.shape[:4] != head:
            raise DimensionMismatchError(f"input {i} has shape {t.shape[:4]}, expected {head}")
    return np.concatenate(inputs, axis=4), [t.shape[4] for t in inputs]


def split_channels(grad_out: np.ndarray, sizes: list[int]) -> list[np.ndarray]:
    return np.split(grad_out, list(itertools.accumulate(sizes))[:-1], axis=4)


# ── Dense head and loss ──────────────────────────────────────────────────────

def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Affine map ``x @ weight + bias`` on (batch, features) inputs."""
    if x.ndim != 2 or weight.shape != (x.shape[1], bias.shape[0]):
        raise DimensionMismatchError(
            f"cannot apply weight {weight.shape} and bias {bias.shape} to input {x.shape}"
        )
    return x @ weight + bias, (x, weight)


def linear_backward(grad_out: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (grad_input, grad_weight, grad_bias)."""
    x, weight = cache
    return grad_out @ weight.T, x.T @ grad_out, grad_out.sum(axis=0)


def mse_l2_loss(
    predictions: np.ndarray,
    targets: np.ndarray,
    params: list[np.ndarray],
    lam: float,
) -> tuple[float, np.ndarray, list[np.ndarray]]:
    """``mean_i ‖a_i - â_i‖² + (λ/2) Σ θ²``.

    Returns (loss, grad_predictions, grad_params) where the parameter
    gradients are the regularizer's ``λ θ`` only.
    """
    if predictions.shape != targets.shape:
        raise DimensionMismatchError(f"predictions {predictions.shape} vs targets {targets.shape}")
    if len(predictions) == 0:
        raise ConfigurationError("loss over an empty batch")
    diff = predictions - targets
    n = len(predictions)
    data_term = float(np.sum(diff.astype(np.float64) ** 2) / n)
    reg_term = 0.5 * lam * float(sum(np.sum(p.astype(np.float64) ** 2) for p in params))
    return data_term + reg_term, (2.0 / n) * diff, [lam * p for p in params]
