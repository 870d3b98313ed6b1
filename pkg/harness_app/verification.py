"""Numeric self-checks: transform identities, concentration trends and layer gradients.

Each suite returns :class:`Check` rows with the measured value next to its
threshold; :func:`verify_theory` and :func:`verify_gradients` gather them
into a :class:`VerificationReport`.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from app.models.experiment import ExperimentConfig
from app.models.system import ArrayGeometry, OFDMConfig
from channel_app import PathParam, PathSet, sample_gains, sfcrm, steering
from channel_app.scene import paths_for_position
from fingerprint_app import (
    adcpm_exact,
    adcpm_mc,
    dft_phase_shifted,
    dft_truncated,
    path_responses,
    sfcpm_exact,
    sfcpm_mc,
    to_angle_delay,
)
from fingerprint_app.theory import (
    angle_domain_cir,
    concentration_fraction,
    limit_window_fraction,
    predict_supports,
    support_mask,
)
from harness_app.datasets import build_scene
from model_app.builders import build_miniature_3dcnn
from model_app.spec import NetworkSpec
from nn_app import ops
from nn_app.gradcheck import directional_check, finite_diff_check
from wknn_app import similarity

logger = logging.getLogger(__name__)

UNITARITY_TOL = 1e-10
ONE_HOT_TOL = 1e-9
PARSEVAL_TOL = 1e-9
CONCENTRATION_TOL = 1e-12
OFF_GRID_MAX = 0.95
ORACLE_LIMITS = {10_000: 0.05, 100_000: 0.017}
LAYER_TOL = 1e-4
LINEAR_TOL = 1e-5
GRADIENT_SEEDS = 20

TREND_SIZES = ((4, 4, 64), (8, 8, 128), (16, 16, 256), (32, 32, 512))
# ((a, b, c), (δv, δh, δr), σ²): support at (a·M + δv, b·N + δh, c·Nc + δr)
TREND_LAYOUT = (
    ((0.5, 0.25, 1 / 16), (0.25, 0.3, 0.2), 0.5),
    ((0.25, 0.75, 1 / 8), (0.3, 0.2, 0.25), 0.3),
    ((0.75, 0.5, 3 / 16), (0.2, 0.25, 0.3), 0.2),
)


@dataclass
class Check:
    suite: str
    name: str
    measured: float
    threshold: float
    relation: str = "<="

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.measured):
            return False
        if self.relation == "<=":
            return self.measured <= self.threshold
        return self.measured >= self.threshold


@dataclass
class VerificationReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["suite", "check", "measured", "relation", "threshold", "passed"])
            for c in self.checks:
                writer.writerow([c.suite, c.name, f"{c.measured:.6e}", c.relation, f"{c.threshold:.6e}", int(c.passed)])

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"suite": c.suite, "check": c.name, "measured": float(c.measured), "relation": c.relation,
                 "threshold": c.threshold, "passed": c.passed}
                for c in self.checks
            ],
        }


def _path(cos_theta: float, u: float, r: float, sigma2: float) -> PathParam:
    """Path with ``cos θ`` and ``sin θ cos φ`` given directly (half-wavelength spacing in mind)."""
    theta = float(np.arccos(cos_theta))
    return PathParam(theta, float(np.arccos(u / np.sin(theta))), r, sigma2)


# ── Transform identities ─────────────────────────────────────────────────────
def unitarity_suite(max_size: int = 32, truncations=((16, 16), (64, 16), (128, 32), (512, 128))) -> list[Check]:
    worst = 0.0
    for M in range(1, max_size + 1):
        V = dft_phase_shifted(M)
        worst = max(worst, float(np.abs(V.conj().T @ V - np.eye(M)).max()))
    checks = [Check("unitarity", f"phase-shifted DFT M=1..{max_size}", worst, UNITARITY_TOL)]
    for Nc, Ng in truncations:
        F = dft_truncated(Nc, Ng)
        residual = float(np.abs(F.conj().T @ F - np.eye(Ng)).max())
        checks.append(Check("unitarity", f"truncated DFT {Nc}x{Ng}", residual, UNITARITY_TOL))
    return checks


def one_hot_suite() -> list[Check]:
    """Integer support cells map to single entries, in angle and in delay."""
    geom = ArrayGeometry(M=8, N=16)
    # m̄ = 4 + 4 cos θ = 6, n̄ = 8 + 8 sin θ cos φ = 11
    path = _path(0.5, 3 / 8, 5.0, 1.0)
    cir = np.abs(angle_domain_cir(steering(geom, path.theta, path.phi), geom))
    target = 6 * geom.N + 11
    off = float(np.delete(cir, target).max())
    checks = [
        Check("one-hot", "angle-domain CIR off-support", off, ONE_HOT_TOL),
        Check("one-hot", "angle-domain CIR peak index", float(np.argmax(cir) != target), 0.0),
    ]

    ofdm = OFDMConfig(Nc=64, Ng=16)
    G = np.abs(to_angle_delay(sfcrm(PathSet((path,)), np.array([1.0]), geom, ofdm), geom, ofdm))
    peak = np.zeros_like(G)
    peak[target, 5] = 1.0
    checks.append(Check("one-hot", "on-grid ADCRM deviation from unit cell", float(np.abs(G - peak).max()), ONE_HOT_TOL))
    return checks


def on_grid_concentration_suite() -> list[Check]:
    geom = ArrayGeometry(M=8, N=16)
    ofdm = OFDMConfig(Nc=64, Ng=16)
    paths = PathSet((_path(0.5, 3 / 8, 2.0, 0.5), _path(-0.25, -0.5, 7.0, 0.3), _path(0.75, 0.25, 12.0, 0.2)))
    omega = adcpm_exact(paths, geom, ofdm).omega
    fraction = concentration_fraction(omega, predict_supports(paths, geom, ofdm), 0, geom)
    return [Check("concentration", "on-grid fraction at window 0", abs(1.0 - fraction), ONE_HOT_TOL)]


# ── Power-matrix identities ──────────────────────────────────────────────────
def _integer_paths() -> PathSet:
    return PathSet((_path(0.3, 0.2, 3.0, 0.6), _path(-0.6, 0.1, 9.0, 0.3), _path(0.1, -0.7, 20.0, 0.1)))


def _off_grid_paths() -> PathSet:
    return PathSet((_path(0.31, 0.17, 3.4, 0.6), _path(-0.58, 0.05, 9.7, 0.3), _path(0.12, -0.66, 20.2, 0.1)))


def parseval_suite(geom: ArrayGeometry, ofdm: OFDMConfig, n_samples: int = 2000, seed: int = 0) -> list[Check]:
    """With integer delays below the guard, ADCPM power equals SFCPM power over M·N·Nc."""
    paths = _integer_paths()
    scale = geom.antennas * ofdm.Nc
    exact = adcpm_exact(paths, geom, ofdm).omega.sum()
    exact_sf = sfcpm_exact(paths, geom, ofdm).omega.sum() / scale
    checks = [Check("parseval", "closed-form relative gap", abs(exact - exact_sf) / exact_sf, PARSEVAL_TOL)]

    # spread of the per-draw total power sets the standard error
    draws = sample_gains(paths, np.random.default_rng([seed, 0]), size=n_samples)
    per_draw = np.sum(np.abs(draws @ path_responses(paths, geom, ofdm).reshape(len(paths), -1)) ** 2, axis=1)
    stderr = per_draw.std(ddof=1) / np.sqrt(n_samples)

    # shared seed: both estimators see the same gain draws
    mc = adcpm_mc(paths, geom, ofdm, n_samples, np.random.default_rng([seed, 1])).omega.sum()
    mc_sf = sfcpm_mc(paths, geom, ofdm, n_samples, np.random.default_rng([seed, 1])).omega.sum() / scale
    checks += [
        Check("parseval", "Monte-Carlo ADCPM vs closed form (std errors)", abs(mc - exact) / stderr, 3.0),
        Check("parseval", "Monte-Carlo SFCPM vs closed form (std errors)", abs(mc_sf - exact) / stderr, 3.0),
        Check("parseval", "Monte-Carlo ADCPM vs SFCPM (std errors)", abs(mc - mc_sf) / stderr, 3.0),
    ]
    return checks


def oracle_suite(geom: ArrayGeometry, ofdm: OFDMConfig, seed: int = 0) -> list[Check]:
    """Monte-Carlo ADCPM converges to the closed form at the √n rate."""
    paths = _off_grid_paths()
    exact = adcpm_exact(paths, geom, ofdm).omega
    errors = {}
    for n, limit in ORACLE_LIMITS.items():
        estimate = adcpm_mc(paths, geom, ofdm, n, np.random.default_rng([seed, n])).omega
        errors[n] = float(np.linalg.norm(estimate - exact) / np.linalg.norm(exact))
    checks = [Check("oracle", f"relative Frobenius error at n={n}", errors[n], limit) for n, limit in ORACLE_LIMITS.items()]

    (n_small, n_large) = sorted(errors)
    expected = np.sqrt(n_large / n_small)
    ratio = errors[n_small] / errors[n_large]
    checks.append(Check("oracle", "error ratio vs sqrt(n) ratio (factor)", max(ratio / expected, expected / ratio), 2.0))
    return checks


def _trend_paths(M: int, N: int, Nc: int) -> PathSet:
    """TREND_LAYOUT placed on an M x N x Nc grid with the same sub-bin offsets at every size."""
    return PathSet(tuple(
        _path(2 * (a + dv / M) - 1, 2 * (b + dh / N) - 1, c * Nc + dr, s)
        for (a, b, c), (dv, dh, dr), s in TREND_LAYOUT
    ))


def _trend_floor(window: int) -> float:
    weights = np.array([s for _, _, s in TREND_LAYOUT])
    limits = np.array([limit_window_fraction(offsets, window) for _, offsets, _ in TREND_LAYOUT])
    return float(weights @ limits / weights.sum())


def concentration_trend_suite(window: int = 1) -> list[Check]:
    """Concentration of an always off-grid path set as the array and bandwidth double.

    The window fraction stays above its large-array limit at every size, while
    the box it occupies shrinks, so the power per support cell grows.
    """
    floor = _trend_floor(window)
    fractions, densities = [], []
    for M, N, Nc in TREND_SIZES:
        geom = ArrayGeometry(M=M, N=N)
        ofdm = OFDMConfig(Nc=Nc, Ng=Nc // 4)
        paths = _trend_paths(M, N, Nc)
        supports = predict_supports(paths, geom, ofdm)
        omega = adcpm_exact(paths, geom, ofdm).omega
        exact_cell = concentration_fraction(omega, supports, 0, geom)
        fraction = concentration_fraction(omega, supports, window, geom)
        cells = support_mask((M, N, ofdm.Ng), supports, window).sum()
        fractions.append((exact_cell, fraction))
        densities.append(fraction * M * N * ofdm.Ng / cells)
        logger.info("Concentration at (%d, %d, %d): window 0 %.6f, window %d %.6f", M, N, Nc, exact_cell, window, fraction)

    checks = []
    for (M, N, Nc), (exact_cell, fraction) in zip(TREND_SIZES, fractions):
        checks += [
            Check("concentration", f"window-0 fraction at ({M},{N},{Nc})", exact_cell, OFF_GRID_MAX),
            Check("concentration", f"window-{window} fraction at ({M},{N},{Nc})", fraction,
                  floor - CONCENTRATION_TOL, ">="),
        ]
    drops = [max(0.0, (a - b) / a) for a, b in zip(densities, densities[1:])]
    checks.append(Check("concentration", f"largest relative drop of power per support cell (window {window})",
                        max(drops), CONCENTRATION_TOL))
    return checks


def discrimination_suite(config: ExperimentConfig, near: float = 1.0, far: float = 10.0) -> list[Check]:
    """Neighbouring positions look more alike than distant ones, on average over anchors."""
    scene = build_scene(config)
    area = config.area
    x0 = area.x_range[0]
    ys = np.linspace(*area.y_range, 5)

    def fingerprint(x, y, z):
        position = (min(x, area.x_range[1]), y, z)
        return adcpm_exact(paths_for_position(scene, position, config.ofdm), config.geometry, config.ofdm).omega

    near_sims, far_sims = [], []
    for z in area.planes:
        for y in ys:
            anchor = fingerprint(x0, y, z)
            near_sims.append(similarity(anchor, fingerprint(x0 + near, y, z)))
            far_sims.append(similarity(anchor, fingerprint(x0 + far, y, z)))
    gap = float(np.mean(near_sims) - np.mean(far_sims))
    return [Check("discrimination", f"mean similarity at {near:g} m minus at {far:g} m", gap, 0.0, ">=")]


def verify_theory(config: ExperimentConfig) -> VerificationReport:
    report = VerificationReport()
    for suite in (
        unitarity_suite,
        one_hot_suite,
        on_grid_concentration_suite,
        lambda: parseval_suite(config.geometry, config.ofdm, seed=config.seed),
        lambda: oracle_suite(config.geometry, config.ofdm, seed=config.seed),
        concentration_trend_suite,
        lambda: discrimination_suite(config),
    ):
        report.checks.extend(suite())
    for c in report.failures:
        logger.warning("FAILED %s / %s: %.3e %s %.3e", c.suite, c.name, c.measured, c.relation, c.threshold)
    logger.info("Theory verification: %d/%d checks passed", len(report.checks) - len(report.failures), len(report.checks))
    return report


# ── Gradients ────────────────────────────────────────────────────────────────
def _projected(rng, shape) -> np.ndarray:
    return rng.standard_normal(shape)


def _check(fn: Callable[[], float], x: np.ndarray, analytic: np.ndarray, rng, step=1e-5, n_coords=24) -> float:
    return finite_diff_check(fn, x, analytic, step=step, n_coords=n_coords, rng=rng)


def _layer_errors(seed: int) -> dict[str, tuple[float, float]]:
    """Worst relative error per layer for one seed, with the tolerance that applies."""
    rng = np.random.default_rng(seed)
    out: dict[str, tuple[float, float]] = {}

    x = rng.standard_normal((2, 4, 5, 6, 3))
    kernel = rng.standard_normal((3, 1, 5, 3, 4))
    w = _projected(rng, (2, 4, 5, 6, 4))
    _, cache = ops.conv3d_forward(x, kernel)
    gx, gk = ops.conv3d_backward(w, cache)
    f = lambda: float(np.sum(ops.conv3d_forward(x, kernel)[0] * w))  # noqa: E731
    out["conv3d"] = (max(_check(f, x, gx, rng), _check(f, kernel, gk, rng)), LINEAR_TOL)

    x = rng.standard_normal((3, 3, 4, 2, 5)) * 2.0 + 0.5
    state = ops.BNState.create(5)
    state.gamma[...] = rng.uniform(0.5, 1.5, 5)
    state.beta[...] = rng.standard_normal(5)
    w = _projected(rng, x.shape)
    _, cache = ops.bn_forward(x, state)
    gx, gg, gb = ops.bn_backward(w, cache)
    f = lambda: float(np.sum(ops.bn_forward(x, state)[0] * w))  # noqa: E731
    out["batchnorm"] = (
        max(_check(f, x, gx, rng), _check(f, state.gamma, gg, rng), _check(f, state.beta, gb, rng)),
        LAYER_TOL,
    )

    x = rng.standard_normal((2, 3, 3, 3, 2))
    x[np.abs(x) < 1e-2] += 0.05  # keep clear of the kink
    w = _projected(rng, x.shape)
    _, mask = ops.relu(x)
    f = lambda: float(np.sum(ops.relu(x)[0] * w))  # noqa: E731
    out["relu"] = (_check(f, x, ops.relu_backward(w, mask), rng), LAYER_TOL)

    for padding, size, stride in (("valid", (2, 2, 2), (2, 2, 2)), ("same", (3, 3, 2), (2, 2, 2))):
        x = rng.standard_normal((2, 5, 4, 6, 2))
        pooled, cache = ops.maxpool3d(x, size, stride, padding)
        w = _projected(rng, pooled.shape)
        f = lambda: float(np.sum(ops.maxpool3d(x, size, stride, padding)[0] * w))  # noqa: E731
        out[f"maxpool-{padding}"] = (_check(f, x, ops.maxpool3d_backward(w, cache), rng), LAYER_TOL)

        pooled, cache = ops.avgpool3d(x, size, stride, padding)
        f = lambda: float(np.sum(ops.avgpool3d(x, size, stride, padding)[0] * w))  # noqa: E731
        out[f"avgpool-{padding}"] = (_check(f, x, ops.avgpool3d_backward(w, cache), rng), LAYER_TOL)

    x = rng.standard_normal((3, 2, 3, 4, 5))
    w = _projected(rng, (3, 5))
    _, spatial = ops.global_avg_pool(x)
    f = lambda: float(np.sum(ops.global_avg_pool(x)[0] * w))  # noqa: E731
    out["global_avg_pool"] = (_check(f, x, ops.global_avg_pool_backward(w, spatial), rng), LAYER_TOL)

    a, b = rng.standard_normal((2, 2, 2, 2, 3)), rng.standard_normal((2, 2, 2, 2, 4))
    w = _projected(rng, (2, 2, 2, 2, 7))
    _, sizes = ops.concat_channels([a, b])
    ga, gb_ = ops.split_channels(w, sizes)
    f = lambda: float(np.sum(ops.concat_channels([a, b])[0] * w))  # noqa: E731
    out["concat"] = (max(_check(f, a, ga, rng), _check(f, b, gb_, rng)), LAYER_TOL)

    x, weight, bias = rng.standard_normal((4, 6)), rng.standard_normal((6, 3)), rng.standard_normal(3)
    w = _projected(rng, (4, 3))
    _, cache = ops.linear(x, weight, bias)
    gx, gw, gbias = ops.linear_backward(w, cache)
    f = lambda: float(np.sum(ops.linear(x, weight, bias)[0] * w))  # noqa: E731
    out["linear"] = (max(_check(f, x, gx, rng), _check(f, weight, gw, rng), _check(f, bias, gbias, rng)), LINEAR_TOL)

    predictions, targets, theta = rng.standard_normal((5, 3)), rng.standard_normal((5, 3)), rng.standard_normal((4, 2))
    _, gp, (gt,) = ops.mse_l2_loss(predictions, targets, [theta], 0.1)
    f = lambda: ops.mse_l2_loss(predictions, targets, [theta], 0.1)[0]  # noqa: E731
    out["mse_l2_loss"] = (max(_check(f, predictions, gp, rng), _check(f, theta, gt, rng)), LAYER_TOL)
    return out


def miniature_spec(seed: int = 0) -> NetworkSpec:
    """Small refinement + inception network on a 2 x 4 x 8 input."""
    return NetworkSpec(branch_channels=2, branch_layers=1, merge_channels=4, inception_base=2, seed=seed).for_input(2, 4, 8)


def network_error(seed: int, lam: float = 1e-3, step: float = 1e-6) -> float:
    """Worst relative error of the miniature 3-D CNN loss gradient along random directions in input and parameters."""
    rng = np.random.default_rng([seed, 1])
    net = build_miniature_3dcnn(miniature_spec(seed), dtype=np.float64)
    net.set_target_scaling(rng.standard_normal(3), rng.uniform(0.5, 2.0, 3))
    x = rng.standard_normal((3, *net.input_shape))
    targets = rng.standard_normal((3, 3))
    params = net.parameters()
    decayed = net.decayed_keys()

    def loss() -> float:
        predictions = net.forward(x, training=True)
        return ops.mse_l2_loss(predictions, targets, [params[k] for k in decayed], lam)[0]

    predictions = net.forward(x, training=True)
    _, grad_pred, grad_reg = ops.mse_l2_loss(predictions, targets, [params[k] for k in decayed], lam)
    grad_x = net.backward(grad_pred)
    grads = {k: v.copy() for k, v in net.gradients().items()}
    for key, reg in zip(decayed, grad_reg):
        grads[key] = grads[key] + reg

    worst = directional_check(loss, x, grad_x, step=step, n_directions=4, rng=rng)
    for key, value in params.items():
        worst = max(worst, directional_check(loss, value, grads[key], step=step, n_directions=2, rng=rng))
    return worst


def verify_gradients(seeds: int = GRADIENT_SEEDS) -> VerificationReport:
    worst: dict[str, tuple[float, float]] = {}
    for seed in range(seeds):
        for name, (err, tol) in _layer_errors(seed).items():
            worst[name] = (max(err, worst.get(name, (0.0, tol))[0]), tol)
        worst["cnn3d-mini"] = (max(network_error(seed), worst.get("cnn3d-mini", (0.0, LAYER_TOL))[0]), LAYER_TOL)
        logger.debug("Gradient seed %d done", seed)
    report = VerificationReport([Check("gradient", f"{name} over {seeds} seeds", err, tol) for name, (err, tol) in worst.items()])
    for c in report.failures:
        logger.warning("FAILED %s: %.3e > %.1e", c.name, c.measured, c.threshold)
    logger.info("Gradient checks: %d/%d layers passed", len(report.checks) - len(report.failures), len(report.checks))
    return report
