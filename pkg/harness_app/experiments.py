"""Multi-method experiments: comparison, SNR robustness, array layout and bandwidth sweeps.

Every experiment writes its CSV tables (and a figure) into ``run_dir`` and
returns the per-point reports so the caller can record them.  CSV files hold
no timings, so identical configs give byte-identical tables.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

from app.errors import ConfigurationError
from app.models.experiment import ExperimentConfig, Method
from app.models.system import ArrayGeometry, OFDMConfig
from fingerprint_app import FingerprintKind
from harness_app import plots
from harness_app.datasets import Dataset, build_scene, generate_dataset, test_set, training_set
from harness_app.evaluation import EvalReport, evaluate, fit_method

logger = logging.getLogger(__name__)

SWEEP_METHODS = (Method.WKNN, Method.CNN3D)
SWEEP_KINDS = (FingerprintKind.SFCPM, FingerprintKind.ADCPM)


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _with_fingerprint(config: ExperimentConfig, **changes) -> ExperimentConfig:
    return config.with_updates(fingerprint=config.fingerprint.model_copy(update=changes))


# ── compare ──────────────────────────────────────────────────────────────────
def compare(
    config: ExperimentConfig,
    run_dir: Path,
    methods: Sequence[Method] | None = None,
    datasets: tuple[Dataset, Dataset] | None = None,
) -> dict[str, EvalReport]:
    """Every method on one shared train/test pair; ``cdf_<method>.csv`` plus ``summary.json``."""
    methods = tuple(methods or config.sweep.methods)
    train, test = datasets or generate_dataset(config)
    reports: dict[str, EvalReport] = {}
    for method in methods:
        localizer = fit_method(config, method, train)
        report = evaluate(localizer, test, config.sweep.latency_queries)
        report.artifact_bytes = localizer.save(run_dir / "artifacts" / method.value)
        report.write_cdf_csv(run_dir / f"cdf_{method.value}.csv")
        reports[method.value] = report

    summary = {
        "config_hash": config.config_hash(),
        "train_points": len(train),
        "test_points": len(test),
        "methods": {name: r.summary() for name, r in reports.items()},
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    plots.plot_cdfs({name: r.cdf_table for name, r in reports.items()}, run_dir / "cdf.png")
    plots.plot_fingerprint(test.fingerprint(0), run_dir / "fingerprint.png")
    return reports


# ── SNR robustness ───────────────────────────────────────────────────────────
def snr_sweep(config: ExperimentConfig, snr_list: Sequence[float], run_dir: Path) -> list[EvalReport]:
    """{WKNN, 3D CNN} x {SFCPM, ADCPM} at every SNR, each model fitted once per fingerprint kind.

    Test sets at a given SNR share their seeds across methods and kinds, so
    every cell sees the same gain and noise draws.
    """
    if not snr_list:
        raise ConfigurationError("snr_list must not be empty")
    scene = build_scene(config)
    reports: list[EvalReport] = []
    for kind in SWEEP_KINDS:
        # denoising (and hence the ADCPM training set) only depends on the SNR being finite
        kind_config = _with_fingerprint(config, kind=kind.value, snr_db=float(snr_list[0]))
        train = training_set(kind_config, scene)
        localizers = [fit_method(kind_config, method, train) for method in SWEEP_METHODS]
        for snr in snr_list:
            test = test_set(_with_fingerprint(kind_config, snr_db=float(snr)), scene)
            for localizer in localizers:
                # latency is reported by compare, not per sweep cell
                report = evaluate(localizer, test, latency_queries=0)
                report.extra["snr_db"] = float(snr)
                reports.append(report)

    rows = [r.summary() for r in reports]
    write_csv(
        run_dir / "sweep.csv",
        ["method", "fingerprint", "snr_db", "mean_error_m"],
        [[row["method"], row["fingerprint"], f"{row['snr_db']:g}", _fmt(row["mean_error_m"])] for row in rows],
    )
    plots.plot_sweep(rows, run_dir / "sweep.png")
    return reports


# ── supplementary sweeps ─────────────────────────────────────────────────────
def sweep_array(config: ExperimentConfig, run_dir: Path) -> list[EvalReport]:
    """The configured method on every (M, N) layout, including linear arrays."""
    reports: list[EvalReport] = []
    geometry = config.geometry
    for m, n in config.sweep.layouts:
        layout = ArrayGeometry(M=m, N=n, lambda_c=geometry.lambda_c, d_v=geometry.d_v, d_h=geometry.d_h)
        layout_config = config.with_updates(geometry=layout)
        train, test = generate_dataset(layout_config)
        report = evaluate(fit_method(layout_config, config.method, train), test, config.sweep.latency_queries)
        report.extra.update(m=m, n=n)
        report.write_cdf_csv(run_dir / f"cdf_{m}x{n}.csv")
        reports.append(report)

    write_csv(
        run_dir / "layouts.csv",
        ["m", "n", "median_error_m", "p90_error_m", "mean_error_m"],
        [[r.extra["m"], r.extra["n"], _fmt(r.median), _fmt(r.p90), _fmt(r.mean)] for r in reports],
    )
    plots.plot_cdfs({f"{r.extra['m']}x{r.extra['n']}": r.cdf_table for r in reports}, run_dir / "cdf.png",
                    title=f"{config.method.value} error by array layout")
    return reports


def scaled_ofdm(base: OFDMConfig, bandwidth_mhz: float) -> OFDMConfig:
    """Numerology at *bandwidth_mhz* with the subcarrier spacing and guard duration of *base*."""
    ts = 1.0 / (bandwidth_mhz * 1e6)
    factor = base.Ts / ts
    nc, ng = round(base.Nc * factor), round(base.Ng * factor)
    if ng < 1:
        raise ConfigurationError(f"{bandwidth_mhz} MHz leaves no guard samples (base Ng={base.Ng})")
    return OFDMConfig(Nc=nc, Ng=ng, Ts=ts)


def sweep_bandwidth(config: ExperimentConfig, run_dir: Path) -> list[EvalReport]:
    reports: list[EvalReport] = []
    for bandwidth in config.sweep.bandwidths_mhz:
        ofdm = scaled_ofdm(config.ofdm, bandwidth)
        band_config = config.with_updates(ofdm=ofdm)
        logger.info("Bandwidth %g MHz: Nc=%d Ng=%d", bandwidth, ofdm.Nc, ofdm.Ng)
        train, test = generate_dataset(band_config)
        report = evaluate(fit_method(band_config, config.method, train), test, config.sweep.latency_queries)
        report.extra.update(bandwidth_mhz=float(bandwidth), nc=ofdm.Nc, ng=ofdm.Ng)
        reports.append(report)

    write_csv(
        run_dir / "bandwidth.csv",
        ["bandwidth_mhz", "nc", "ng", "median_error_m", "p90_error_m", "mean_error_m"],
        [[f"{r.extra['bandwidth_mhz']:g}", r.extra["nc"], r.extra["ng"], _fmt(r.median), _fmt(r.p90), _fmt(r.mean)]
         for r in reports],
    )
    return reports
