"""Central finite-difference checks of analytic gradients."""

import logging
from typing import Callable

import numpy as np

from app.errors import ConfigurationError, DimensionMismatchError

logger = logging.getLogger(__name__)

# only guards against 0/0 when both gradients vanish
DEFAULT_FLOOR = 1e-8


def relative_error(analytic, numeric, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _check_inputs(x: np.ndarray, analytic: np.ndarray) -> None:
    if x.dtype != np.float64:
        raise ConfigurationError(f"gradient checks need float64 inputs, got {x.dtype}")
    if not x.flags.c_contiguous:
        raise ConfigurationError("gradient checks perturb x in place and need a contiguous array")
    if analytic.shape != x.shape:
        raise DimensionMismatchError(f"analytic gradient {analytic.shape} vs input {x.shape}")


def finite_diff_check(
    fn: Callable[[], float],
    x: np.ndarray,
    analytic: np.ndarray,
    step: float = 1e-5,
    n_coords: int | None = 32,
    rng: np.random.Generator | None = None,
    floor: float = DEFAULT_FLOOR,
) -> float:
    """Max relative error between *analytic* and ``(f(x+h) - f(x-h)) / 2h``.

    *fn* evaluates the scalar objective reading *x*, which is perturbed in
    place and restored.  With *n_coords* set, that many coordinates are
    sampled; ``None`` checks every coordinate.
    """
    _check_inputs(x, analytic)
    if n_coords is None or n_coords >= x.size:
        coords = np.arange(x.size)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        coords = rng.choice(x.size, size=n_coords, replace=False)

    flat = x.reshape(-1)
    worst = 0.0
    for i in coords:
        saved = flat[i]
        flat[i] = saved + step
        f_plus = fn()
        flat[i] = saved - step
        f_minus = fn()
        flat[i] = saved
        numeric = (f_plus - f_minus) / (2 * step)
        err = float(relative_error(analytic.reshape(-1)[i], numeric, floor))
        worst = max(worst, err)
    logger.debug("Finite-difference check over %d coordinates: max relative error %.3e", len(coords), worst)
    return worst


def directional_check(
    fn: Callable[[], float],
    x: np.ndarray,
    analytic: np.ndarray,
    step: float = 1e-5,
    n_directions: int = 4,
    rng: np.random.Generator | None = None,
    floor: float = DEFAULT_FLOOR,
) -> float:
    """Max relative error of directional derivatives along random unit directions.

    Compares ``<analytic, d>`` with ``(f(x+hd) - f(x-hd)) / 2h``.  Every
    coordinate enters each comparison, so small gradient entries do not sit
    at the rounding-noise level the way they do in a per-coordinate check.
    """
    _check_inputs(x, analytic)
    rng = rng if rng is not None else np.random.default_rng(0)
    saved = x.copy()
    worst = 0.0
    for _ in range(n_directions):
        d = rng.standard_normal(x.shape)
        d /= np.linalg.norm(d)
        x[...] = saved + step * d
        f_plus = fn()
        x[...] = saved - step * d
        f_minus = fn()
        x[...] = saved
        numeric = (f_plus - f_minus) / (2 * step)
        worst = max(worst, float(relative_error(np.sum(analytic * d), numeric, floor)))
    logger.debug("Directional check over %d directions: max relative error %.3e", n_directions, worst)
    return worst
