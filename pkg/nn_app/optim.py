"""Adaptive-moment optimizer over named parameter blocks."""

import logging
from dataclasses import dataclass, field

import numpy as np

from app.errors import DimensionMismatchError, NumericalError

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
) -> dict[str, np.ndarray]:
    """Bias-corrected Adam update, applied to *params* in place.

    All gradients are validated before any parameter moves.
    """
    for name, g in grads.items():
        if name not in params:
            raise DimensionMismatchError(f"gradient for unknown parameter block {name!r}")
        if g.shape != params[name].shape:
            raise DimensionMismatchError(f"{name}: gradient {g.shape} vs parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter block {name!r}")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        m = state.first_moment.setdefault(name, np.zeros_like(p))
        v = state.second_moment.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        p -= update.astype(p.dtype, copy=False)
    return params
