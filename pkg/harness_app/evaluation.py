"""Fit a localization method on a training set and score it on a test set."""

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from app.errors import DimensionMismatchError
from app.models.experiment import ExperimentConfig, Method
from harness_app.datasets import Dataset
from model_app.builders import build_2dcnn, build_3dcnn
from model_app.layers import Network
from model_app.storage import encode_model, save_model
from model_app.training import TrainingLog, predict, train
from wknn_app import FingerprintDatabase, encode_database, query_many, save_database

logger = logging.getLogger(__name__)

DATABASE_FILE = "database.bin"


@dataclass
class EvalReport:
    method: str
    kind: str
    errors: np.ndarray
    per_query_ms: float
    artifact_bytes: int
    train_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def cdf_table(self) -> np.ndarray:
        """Rows ``(error_m, k/n)`` over the sorted errors."""
        ordered = np.sort(self.errors)
        return np.column_stack([ordered, np.arange(1, len(ordered) + 1) / len(ordered)])

    def percentile(self, q: float) -> float:
        # nearest rank: always one of the observed errors
        return float(np.percentile(self.errors, q, method="inverted_cdf"))

    @property
    def median(self) -> float:
        return self.percentile(50)

    @property
    def p90(self) -> float:
        return self.percentile(90)

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    def summary(self) -> dict:
        return {
            "method": self.method,
            "fingerprint": self.kind,
            "test_points": int(len(self.errors)),
            "median_error_m": self.median,
            "p90_error_m": self.p90,
            "mean_error_m": self.mean,
            "per_query_ms": self.per_query_ms,
            "artifact_bytes": self.artifact_bytes,
            "train_seconds": self.train_seconds,
            **self.extra,
        }

    def write_cdf_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["error_m", "cdf"])
            for error, level in self.cdf_table:
                writer.writerow([f"{error:.6f}", f"{level:.6f}"])


# ── Localizers ───────────────────────────────────────────────────────────────
class WknnLocalizer:
    method = Method.WKNN

    def __init__(self, db: FingerprintDatabase, K: int) -> None:
        self.db = db
        self.K = K
        self.train_seconds = 0.0

    def check(self, dataset: Dataset) -> None:
        if self.db.dims != (dataset.M, dataset.N, dataset.columns):
            raise DimensionMismatchError(f"database dims {self.db.dims} do not match the test set")

    def locate(self, dataset: Dataset, index: slice | None = None) -> np.ndarray:
        omegas = dataset.omegas if index is None else dataset.omegas[index]
        return query_many(self.db, omegas, self.K)

    def artifact_bytes(self) -> int:
        return len(encode_database(self.db))

    def save(self, directory: Path) -> int:
        directory.mkdir(parents=True, exist_ok=True)
        return save_database(self.db, directory / DATABASE_FILE)


class NetworkLocalizer:
    def __init__(self, net: Network, method: Method, log: TrainingLog | None = None) -> None:
        self.net = net
        self.method = method
        self.log = log
        self.train_seconds = log.seconds if log else 0.0

    def inputs(self, dataset: Dataset, index: slice | None = None) -> np.ndarray:
        return dataset.images(index) if self.method is Method.CNN2D else dataset.tensors(index)

    def check(self, dataset: Dataset) -> None:
        shape = self.inputs(dataset, slice(0, 1)).shape[1:]
        if shape != self.net.input_shape:
            raise DimensionMismatchError(f"{self.method.value} expects inputs {self.net.input_shape}, test set gives {shape}")

    def locate(self, dataset: Dataset, index: slice | None = None) -> np.ndarray:
        return predict(self.net, self.inputs(dataset, index))

    def _training_record(self) -> dict:
        if not self.log:
            return {}
        return {"epochs": len(self.log.epoch_losses), "final_loss": self.log.final_loss, "seconds": self.log.seconds}

    def artifact_bytes(self) -> int:
        manifest, blob = encode_model(self.net, self._training_record())
        return len(manifest) + len(blob)

    def save(self, directory: Path) -> int:
        return save_model(self.net, directory, self._training_record())


Localizer = WknnLocalizer | NetworkLocalizer


def fit_method(config: ExperimentConfig, method: Method, train_set: Dataset) -> Localizer:
    """Build the database or train the network for *method*."""
    if method is Method.WKNN:
        return WknnLocalizer(train_set.to_database(), config.wknn_k)

    if method is Method.CNN2D:
        net = build_2dcnn(config.network2d_spec())
        inputs = train_set.images()
    else:
        net = build_3dcnn(config.network_spec())
        inputs = train_set.tensors()
    tc = config.training
    logger.info("Training %s (%d parameters) on %d samples", method.value, net.parameter_count, len(train_set))
    log = train(
        net,
        inputs,
        train_set.positions,
        epochs=tc.epochs,
        batch_size=tc.batch_size,
        seed=tc.seed,
        learning_rate=tc.learning_rate,
        log_every=tc.log_every,
    )
    return NetworkLocalizer(net, method, log)


def _latency_ms(localizer: Localizer, test_set: Dataset, queries: int) -> float:
    """Median wall-clock time of single-sample queries after one warm-up pass."""
    if queries < 1:
        return 0.0
    localizer.locate(test_set, slice(0, 1))
    samples = []
    for q in range(queries):
        i = q % len(test_set)
        started = time.perf_counter()
        localizer.locate(test_set, slice(i, i + 1))
        samples.append((time.perf_counter() - started) * 1e3)
    return float(np.median(samples))


def evaluate(localizer: Localizer, test_set: Dataset, latency_queries: int = 100) -> EvalReport:
    localizer.check(test_set)
    estimates = localizer.locate(test_set)
    errors = np.linalg.norm(estimates - test_set.positions, axis=1)
    report = EvalReport(
        method=localizer.method.value,
        kind=test_set.kind.value,
        errors=errors,
        per_query_ms=_latency_ms(localizer, test_set, latency_queries),
        artifact_bytes=localizer.artifact_bytes(),
        train_seconds=localizer.train_seconds,
    )
    logger.info(
        "%s/%s: median %.3f m, p90 %.3f m, mean %.3f m, %.3f ms/query, %d bytes",
        report.method, report.kind, report.median, report.p90, report.mean, report.per_query_ms, report.artifact_bytes,
    )
    return report


def run_method(config: ExperimentConfig, train_set: Dataset, test_set: Dataset) -> EvalReport:
    localizer = fit_method(config, config.method, train_set)
    return evaluate(localizer, test_set, config.sweep.latency_queries)
