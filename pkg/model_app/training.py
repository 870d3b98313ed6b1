"""Mini-batch training and inference for layer-graph networks."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from app.errors import ConfigurationError, DimensionMismatchError, NumericalError
from model_app.layers import Network
from nn_app.ops import mse_l2_loss
from nn_app.optim import OptimizerState, adam_step

logger = logging.getLogger(__name__)


@dataclass
class TrainingLog:
    epoch_losses: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


def _check_dataset(net: Network, inputs: np.ndarray, targets: np.ndarray) -> None:
    if len(inputs) == 0:
        raise ConfigurationError("training set is empty")
    if tuple(inputs.shape[1:]) != net.input_shape:
        raise DimensionMismatchError(f"inputs of shape {inputs.shape[1:]} do not match the network {net.input_shape}")
    if targets.shape != (len(inputs), 3):
        raise DimensionMismatchError(f"targets of shape {targets.shape} for {len(inputs)} inputs")


def fit_target_scaling(net: Network, targets: np.ndarray) -> None:
    """Fix the output map to the per-axis mean and spread of *targets*."""
    offset = targets.mean(axis=0)
    scale = targets.std(axis=0)
    scale[scale < 1e-6] = 1.0
    net.set_target_scaling(offset, scale)


def total_loss(net: Network, inputs: np.ndarray, targets: np.ndarray, lam: float) -> float:
    """Loss with running batch-norm statistics (no state is touched)."""
    params = net.parameters()
    predictions = net.forward(inputs.astype(_dtype(net)), training=False)
    loss, _, _ = mse_l2_loss(predictions, targets.astype(predictions.dtype), [params[k] for k in net.decayed_keys()], lam)
    return loss


def _dtype(net: Network):
    return next(iter(net.parameters().values())).dtype


def train(
    net: Network,
    inputs: np.ndarray,
    targets: np.ndarray,
    epochs: int = 200,
    batch_size: int = 32,
    lam: float | None = None,
    seed: int = 0,
    learning_rate: float = 1e-3,
    fit_scaling: bool = True,
    log_every: int = 10,
) -> TrainingLog:
    """Minimize ``mean ‖a - â‖² + (λ/2)‖θ‖²`` with Adam over shuffled mini-batches.

    *lam* defaults to the network spec's ``weight_decay``.  The shuffle
    stream is seeded, so equal seeds give identical logs and parameters.
    """
    _check_dataset(net, inputs, targets)
    if epochs < 1 or batch_size < 1:
        raise ConfigurationError(f"epochs and batch_size must be >= 1, got {epochs}, {batch_size}")
    lam = net.spec.weight_decay if lam is None else lam
    dtype = _dtype(net)
    X = np.ascontiguousarray(inputs, dtype=dtype)
    Y = np.ascontiguousarray(targets, dtype=dtype)
    if fit_scaling:
        fit_target_scaling(net, Y)

    params = net.parameters()
    decayed = net.decayed_keys()
    state = OptimizerState(learning_rate=learning_rate)
    rng = np.random.default_rng(seed)
    log = TrainingLog()
    started = time.perf_counter()

    for epoch in range(epochs):
        order = rng.permutation(len(X))
        running, seen = 0.0, 0
        for batch, start in enumerate(range(0, len(X), batch_size)):
            idx = order[start:start + batch_size]
            predictions = net.forward(X[idx], training=True)
            loss, grad_pred, grad_reg = mse_l2_loss(predictions, Y[idx], [params[k] for k in decayed], lam)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch} batch {batch}")
            net.backward(grad_pred)
            grads = net.gradients()
            for key, reg in zip(decayed, grad_reg):
                grads[key] = grads[key] + reg
            try:
                adam_step(params, grads, state)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch} batch {batch}: {exc}") from exc
            log.step_losses.append(loss)
            running += loss * len(idx)
            seen += len(idx)
            logger.debug("epoch %d batch %d loss %.6f", epoch, batch, loss)
        log.epoch_losses.append(running / seen)
        if log_every and (epoch % log_every == 0 or epoch == epochs - 1):
            logger.info("epoch %d/%d mean loss %.4f", epoch + 1, epochs, log.epoch_losses[-1])

    log.seconds = time.perf_counter() - started
    return log


def predict(net: Network, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Position estimates in meters; a single input gives a 3-vector."""
    x = np.asarray(x)
    single = x.ndim == len(net.input_shape)
    if single:
        x = x[None]
    if tuple(x.shape[1:]) != net.input_shape:
        raise DimensionMismatchError(f"input of shape {x.shape[1:]} does not match the network {net.input_shape}")
    x = x.astype(_dtype(net), copy=False)
    out = np.concatenate([
        net.forward(x[start:start + batch_size], training=False)
        for start in range(0, len(x), batch_size)
    ])
    return out[0] if single else out
