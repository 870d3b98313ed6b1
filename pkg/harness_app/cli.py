"""Command-line entry point.

Every command except ``history`` reads one JSON config (plus ``--set``
overrides) and writes its outputs into ``<run root>/<command>-<hash12>``.
Exit codes: 0 success, 1 usage or configuration error, 2 verification
failure, 3 numerical failure.
"""

import argparse
import asyncio
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence

from app import settings
from app.errors import LocalizerError
from app.models.experiment import ExperimentConfig, Method, load_experiment_config
from channel_app.scene import save_scene
from database_app import database as ledger
from fingerprint_app.codec import export_fingerprint_csv, save_fingerprint
from harness_app import experiments, plots
from harness_app.datasets import Dataset, build_scene, generate_dataset, test_set, training_set
from harness_app.evaluation import NetworkLocalizer, WknnLocalizer, evaluate, fit_method
from harness_app.verification import GRADIENT_SEEDS, verify_gradients, verify_theory
from model_app.storage import MANIFEST_NAME, load_model
from wknn_app import load_database

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFICATION = 2


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1 and print the usage text."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ── Run directory and ledger ─────────────────────────────────────────────────
class Run:
    def __init__(self, command: str, config: ExperimentConfig, run_dir: Optional[Path]) -> None:
        self.command = command
        self.config = config
        self.config_hash = config.config_hash()
        name = f"{command.replace(' ', '-')}-{self.config_hash[:12]}"
        self.dir = Path(run_dir) if run_dir else settings.RUN_ROOT / name
        self.summaries: list[dict] = []
        self.started = datetime.now(timezone.utc)

    def open(self) -> "Run":
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "config.json").write_text(json.dumps(self.config.model_dump(mode="json"), indent=2, sort_keys=True))
        logger.info("Run directory %s", self.dir)
        return self

    def close(self, exit_code: int, argv: Sequence[str]) -> None:
        manifest = {
            "command": self.command,
            "argv": list(argv),
            "config_hash": self.config_hash,
            "started": self.started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
            "exit_code": exit_code,
            "files": sorted(str(p.relative_to(self.dir)) for p in self.dir.rglob("*") if p.is_file()),
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
        _record(self, exit_code)


async def _write_ledger(run: Run, exit_code: int) -> None:
    ledger.configure(settings.RUN_ROOT / settings.DATABASE_FILE)
    try:
        await ledger.engine_start()
        row = await ledger.add_run(run.command, run.config_hash, str(run.dir))
        if run.summaries:
            await ledger.add_method_results(row.id, run.summaries)
        await ledger.finish_run(row.id, exit_code)
    finally:
        await ledger.engine_stop()


def _record(run: Run, exit_code: int) -> None:
    if not settings.RECORD_RUNS:
        return
    try:
        settings.RUN_ROOT.mkdir(parents=True, exist_ok=True)
        asyncio.run(_write_ledger(run, exit_code))
    except Exception as exc:
        logger.warning("Skipped ledger write for %s: %s", run.command, exc)


# ── Commands ─────────────────────────────────────────────────────────────────
def cmd_scene_gen(run: Run, args) -> int:
    scene = build_scene(run.config)
    save_scene(scene, run.dir / "scene.json")
    logger.info("Scene with %d scatterers written", len(scene.scatterers))
    return EXIT_OK


def _write_dataset(dataset: Dataset, directory: Path) -> None:
    size = dataset.save(directory / f"{dataset.split}.bin")
    logger.info("%s set: %d samples, %d bytes", dataset.split, len(dataset), size)


def cmd_dataset_gen(run: Run, args) -> int:
    train, test = generate_dataset(run.config)
    for dataset in (train, test):
        _write_dataset(dataset, run.dir)
    example = test.fingerprint(0)
    save_fingerprint(example, run.dir / "example.fp")
    export_fingerprint_csv(example, run.dir / "example.csv")
    plots.plot_fingerprint(example, run.dir / "fingerprint.png")
    (run.dir / "dataset.json").write_text(json.dumps({
        "train_points": len(train),
        "test_points": len(test),
        "fingerprint": train.kind.value,
        "dims": [train.M, train.N, train.columns],
        "provenance": train.provenance,
    }, indent=2))
    return EXIT_OK


def cmd_train(run: Run, args) -> int:
    config = run.config
    localizer = fit_method(config, config.method, training_set(config))
    size = localizer.save(run.dir / "artifact")
    if isinstance(localizer, NetworkLocalizer) and localizer.log:
        experiments.write_csv(
            run.dir / "training.csv",
            ["epoch", "mean_loss"],
            [[i + 1, f"{loss:.6f}"] for i, loss in enumerate(localizer.log.epoch_losses)],
        )
    logger.info("Saved %s artifact (%d bytes)", config.method.value, size)
    return EXIT_OK


def _load_localizer(config: ExperimentConfig, artifact: Path):
    if (artifact / MANIFEST_NAME).is_file():
        net = load_model(artifact)
        method = Method.CNN2D if net.kind == "cnn2d" else Method.CNN3D
        return NetworkLocalizer(net, method)
    if artifact.is_dir():
        artifact = artifact / "database.bin"
    return WknnLocalizer(load_database(artifact), config.wknn_k)


def cmd_eval(run: Run, args) -> int:
    config = run.config
    if args.artifact:
        localizer = _load_localizer(config, Path(args.artifact))
        test = test_set(config)
    else:
        train, test = generate_dataset(config)
        localizer = fit_method(config, config.method, train)
    report = evaluate(localizer, test, config.sweep.latency_queries)
    report.write_cdf_csv(run.dir / "cdf.csv")
    (run.dir / "report.json").write_text(json.dumps(report.summary(), indent=2, sort_keys=True))
    plots.plot_cdfs({report.method: report.cdf_table}, run.dir / "cdf.png")
    run.summaries.append(report.summary())
    return EXIT_OK


def cmd_compare(run: Run, args) -> int:
    methods = [Method(m) for m in args.methods] if args.methods else None
    reports = experiments.compare(run.config, run.dir, methods)
    run.summaries.extend(r.summary() for r in reports.values())
    return EXIT_OK


def cmd_sweep_snr(run: Run, args) -> int:
    snr_list = args.snr if args.snr else list(run.config.sweep.snr_db)
    reports = experiments.snr_sweep(run.config, snr_list, run.dir)
    run.summaries.extend(r.summary() for r in reports)
    return EXIT_OK


def cmd_sweep_array(run: Run, args) -> int:
    run.summaries.extend(r.summary() for r in experiments.sweep_array(run.config, run.dir))
    return EXIT_OK


def cmd_sweep_bandwidth(run: Run, args) -> int:
    run.summaries.extend(r.summary() for r in experiments.sweep_bandwidth(run.config, run.dir))
    return EXIT_OK


def _verification_exit(report, run: Run, stem: str) -> int:
    report.write_csv(run.dir / f"{stem}.csv")
    (run.dir / f"{stem}.json").write_text(json.dumps(report.as_dict(), indent=2))
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.suite:<15} {c.name:<55} {c.measured:.3e} {c.relation} {c.threshold:.1e}")
    return EXIT_OK if report.passed else EXIT_VERIFICATION


def cmd_verify_theory(run: Run, args) -> int:
    return _verification_exit(verify_theory(run.config), run, "verification")


def cmd_gradcheck(run: Run, args) -> int:
    return _verification_exit(verify_gradients(args.seeds), run, "gradcheck")


def cmd_history(args) -> int:
    async def fetch():
        ledger.configure(settings.RUN_ROOT / settings.DATABASE_FILE)
        try:
            await ledger.engine_start()
            runs = await ledger.get_runs(args.limit, args.command_filter)
            return [(r, await ledger.get_results(r.id)) for r in runs]
        finally:
            await ledger.engine_stop()

    for run, results in asyncio.run(fetch()):
        status = "running" if run.exit_code is None else f"exit {run.exit_code}"
        print(f"{run.started_at:%Y-%m-%d %H:%M:%S}  {run.command:<16} {run.config_hash[:12]}  {status:<8} {run.run_dir}")
        for r in results:
            snr = "" if r.snr_db is None else f" snr={r.snr_db:g}dB"
            label = f" {r.label}" if r.label else ""
            print(f"    {r.method}/{r.fingerprint}{snr}{label}: median {r.median_error_m:.3f} m, "
                  f"p90 {r.p90_error_m:.3f} m, mean {r.mean_error_m:.3f} m")
    return EXIT_OK


# ── Parser ───────────────────────────────────────────────────────────────────
def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="experiment config (JSON); defaults apply when omitted")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field by dotted path, e.g. training.epochs=5")
    parser.add_argument("--run-dir", type=Path, help="write outputs here instead of the run root")
    parser.add_argument("--log-level", help="root log level (default from ADLOC_LOG_LEVEL)")


def _command(subparsers, name: str, handler: Callable, help: str) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(name, help=help)
    _common(parser)
    parser.set_defaults(handler=handler, command=name)
    return parser


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="adloc", description="Angle-delay fingerprint localization toolkit")
    sub = parser.add_subparsers(dest="command_group", required=True, metavar="COMMAND")

    scene = sub.add_parser("scene", help="scatterer scenes")
    scene_sub = scene.add_subparsers(dest="action", required=True, metavar="ACTION")
    _command(scene_sub, "gen", cmd_scene_gen, "generate the configured scene").set_defaults(command="scene gen")

    dataset = sub.add_parser("dataset", help="fingerprint datasets")
    dataset_sub = dataset.add_subparsers(dest="action", required=True, metavar="ACTION")
    _command(dataset_sub, "gen", cmd_dataset_gen, "generate training and test sets").set_defaults(command="dataset gen")

    _command(sub, "train", cmd_train, "train the configured method and save its artifact")
    evaluate_parser = _command(sub, "eval", cmd_eval, "evaluate the configured method on the test set")
    evaluate_parser.add_argument("--artifact", type=Path, help="saved model directory or database file")
    compare_parser = _command(sub, "compare", cmd_compare, "compare methods on one shared dataset")
    compare_parser.add_argument("--methods", nargs="+", choices=[m.value for m in Method])
    snr_parser = _command(sub, "sweep-snr", cmd_sweep_snr, "robustness against SNR")
    snr_parser.add_argument("--snr", type=float, nargs="+", help="SNR values in dB (default from the config)")
    _command(sub, "verify-theory", cmd_verify_theory, "run the transform and concentration checks")
    grad_parser = _command(sub, "gradcheck", cmd_gradcheck, "finite-difference checks of every layer")
    grad_parser.add_argument("--seeds", type=int, default=GRADIENT_SEEDS)
    _command(sub, "sweep-array", cmd_sweep_array, "accuracy across array layouts")
    _command(sub, "sweep-bandwidth", cmd_sweep_bandwidth, "accuracy across bandwidths")

    history = sub.add_parser("history", help="list recorded runs")
    history.add_argument("--limit", type=int, default=20)
    history.add_argument("--command", dest="command_filter", help="only runs of this command")
    history.add_argument("--log-level")
    history.set_defaults(handler=None, command="history")
    return parser


def _configure_logging(level: Optional[str]) -> None:
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def cli(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args.log_level)

    if args.command == "history":
        try:
            return cmd_history(args)
        except Exception as exc:
            logger.error("history: %s", exc)
            return EXIT_USAGE

    try:
        config = load_experiment_config(args.config, args.overrides)
    except LocalizerError as exc:
        parser.print_usage(sys.stderr)
        logger.error("%s", exc)
        return exc.exit_code

    run = Run(args.command, config, args.run_dir).open()
    try:
        code = args.handler(run, args)
    except LocalizerError as exc:
        logger.error("%s failed: %s", args.command, exc)
        code = exc.exit_code
    except ValueError as exc:
        # derived configs (sweep points) are validated late
        logger.error("%s failed: invalid parameters: %s", args.command, exc)
        code = EXIT_USAGE
    run.close(code, argv)
    return code
