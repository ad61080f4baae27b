"""
CLI Module - Command-line front end.

Subcommands:
    simulate      Generate a trace CSV from a scenario config or preset
    detect        Run filter and detector over a trace or measurement log
    characterize  Hadamard/Allan stability and noise fit of each local clock
    batch         Simulate and detect over configs x seeds in parallel

Exit codes: 0 success, 2 usage/config/input data, 3 I/O, 4 numerical failure.
"""
import argparse
import glob
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.config import Config
from modules.detector import CalibrationResult
from modules.ensemble_runner import (DetectorSettings, calibrate_estimates, detect, filter_model_for,
                                     resolve_calibration, run_filter, run_scenario)
from modules.reporting import (RunReport, stability_report, summarize_batch, write_metrics_table,
                               write_run_report, write_series_csv, write_summary_table)
from modules.scenario import MeasurementLog, ScenarioConfig, config_hash, measurement_log, simulate
from modules.stability import characterize_phase
from modules.trace_store import (TraceStore, companion_config_path, is_measurement_csv,
                                 load_calibration, load_measurement_csv, load_scenario_config,
                                 load_trace_csv, write_json)
from utils.errors import ClockGuardError, ConfigError, InvalidArgumentError, InvalidDataError
from utils.logger import run_logger, setup_logger

logger = setup_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def _trace_stem(path: Path) -> str:
    stem = Path(path).stem
    for suffix in ("_trace", "_measurements"):
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def _load_log(path: Path, config: ScenarioConfig) -> MeasurementLog:
    """Measurement log from a trace CSV (measured with the config) or a measurement CSV."""
    if is_measurement_csv(path):
        return load_measurement_csv(path)
    return measurement_log(load_trace_csv(path), config.quantization)


def cmd_simulate(config_path: str, out_dir: Optional[str] = None,
                 seed: Optional[int] = None) -> int:
    """
    Simulate a scenario and write its trace plus the resolved config.

    Args:
        config_path: Config file or preset name
        out_dir: Output directory (default from config)
        seed: Seed override

    Returns:
        int: Exit code
    """
    config = load_scenario_config(config_path)
    if seed is not None:
        config = config.with_overrides(seed=seed)

    traces = simulate(config)
    store = TraceStore(out_dir)
    stem = f"{config.name}_seed{config.seed}"
    digest = config_hash(config)
    trace_path = store.save_trace(traces, stem, metadata={
        "scenario": config.name,
        "seed": config.seed,
        "config_sha256": digest,
        "tool": f"{Config.TOOL_NAME} {Config.TOOL_VERSION}",
    })
    config_echo = store.save_config(config, stem)

    print(f"✅ Simulated '{config.name}' (seed {config.seed}, {len(traces)} epochs)")
    print(f"   Trace:  {trace_path}")
    print(f"   Config: {config_echo}")
    return EXIT_OK


def _resolve_detect_calibration(calibration_arg: Optional[str], config: ScenarioConfig,
                                settings: DetectorSettings, num_clocks: int) -> CalibrationResult:
    if calibration_arg is None:
        return resolve_calibration(config, settings)

    path = Path(calibration_arg)
    if path.suffix.lower() == ".csv":
        benign = _load_log(path, config)
        if benign.num_clocks != num_clocks:
            raise InvalidDataError(
                f"Benign trace {path} has {benign.num_clocks} clocks, "
                f"the trace under test has {num_clocks}"
            )
        estimates = run_filter(benign, filter_model_for(config))
        calibration = calibrate_estimates(estimates, settings)
        logger.info(f"Calibrated on benign trace {path}")
        return calibration
    return load_calibration(calibration_arg)


def cmd_detect(trace_path: str, calibration: Optional[str] = None,
               out_dir: Optional[str] = None, config_path: Optional[str] = None,
               multiplier: Optional[float] = None,
               confirm_epochs: int = Config.DEFAULT_CONFIRM_EPOCHS,
               warmup: float = Config.DEFAULT_WARMUP) -> int:
    """
    Run the filter and detector over a trace and write series and report.

    Args:
        trace_path: Trace CSV or measurement CSV
        calibration: Calibration JSON, shipped calibration name, or benign trace CSV;
            defaults to the config's reference calibration or a benign-twin run
        out_dir: Output directory
        config_path: Scenario config (default: config echo next to the trace)
        multiplier: Alarm multiplier (default: the calibration's)
        confirm_epochs: Consecutive epochs needed to raise an alarm
        warmup: Seconds after the first epoch during which no alarm is raised

    Returns:
        int: Exit code
    """
    trace_path = Path(trace_path)
    if config_path is None:
        echo = companion_config_path(trace_path)
        if not echo.is_file():
            raise ConfigError(
                f"No --config given and no config echo found next to the trace ({echo})"
            )
        config_path = str(echo)
    config = load_scenario_config(config_path)

    measurement_only = is_measurement_csv(trace_path)
    log = _load_log(trace_path, config)
    if log.num_clocks != config.num_clocks:
        raise InvalidDataError(
            f"Trace {trace_path} has {log.num_clocks} clocks but config "
            f"'{config.name}' describes {config.num_clocks}"
        )

    base = DetectorSettings(multiplier if multiplier is not None else Config.DEFAULT_MULTIPLIER,
                            confirm_epochs, warmup)
    cal = _resolve_detect_calibration(calibration, config, base, log.num_clocks)
    settings = DetectorSettings(multiplier if multiplier is not None else cal.multiplier,
                                confirm_epochs, warmup)
    cal = cal.with_multiplier(settings.multiplier)

    estimates = run_filter(log, filter_model_for(config))
    attack_start = None if measurement_only else config.attack.attack_start
    verdicts, metrics = detect(log, estimates, cal, attack_start, settings)

    store = TraceStore(out_dir)
    stem = _trace_stem(trace_path)
    series_path = write_series_csv(store.path_for(stem, "series.csv"), estimates, verdicts,
                                   cal, log.attack_truth, measurements=log.z)
    report = RunReport(
        scenario={
            "name": config.name,
            "trace": str(trace_path),
            "epochs": len(log),
            "num_clocks": log.num_clocks,
            "attack": config.attack.to_dict() if not measurement_only else None,
            "confirm_epochs": settings.confirm_epochs,
            "warmup": settings.warmup,
        },
        calibration=cal,
        metrics=metrics,
        seed=config.seed,
        config_hash=config_hash(config),
        series_paths=[str(series_path)],
    )
    report_path = write_run_report(report, store.path_for(stem, "report.json"))

    print(f"✅ Detection on {trace_path} ({len(log)} epochs, {settings.multiplier:g}σ)")
    print(f"   First alarm: {metrics.first_alarm_epoch}  latency: {metrics.detection_latency}  "
          f"false positives: {metrics.false_positive_count}")
    print(f"   Report: {report_path}")
    return EXIT_OK


def cmd_characterize(trace_path: str, out_dir: Optional[str] = None) -> int:
    """
    Stability curves and noise fit for every local clock in a trace.

    Args:
        trace_path: Trace CSV with at least Config.MIN_CHARACTERIZE_EPOCHS epochs
        out_dir: Output directory

    Returns:
        int: Exit code
    """
    traces = load_trace_csv(trace_path)
    if len(traces) < Config.MIN_CHARACTERIZE_EPOCHS:
        raise InvalidArgumentError(
            f"Characterization needs at least {Config.MIN_CHARACTERIZE_EPOCHS} epochs, "
            f"trace has {len(traces)}"
        )
    tau0 = traces.tau
    sections = {
        f"clock{i + 1}": characterize_phase(traces.local_phases[i], tau0)
        for i in range(traces.num_local_clocks)
    }
    document = stability_report(sections, tau0, len(traces))
    store = TraceStore(out_dir)
    path = store.save_json(document, _trace_stem(Path(trace_path)), "stability.json")

    print(f"✅ Characterized {traces.num_local_clocks} clock(s) over {len(traces)} epochs")
    for name, result in sections.items():
        if result.fit is not None:
            spec = result.fit.spec
            print(f"   {name}: q_theta={spec.q_theta:.3e} q_gamma={spec.q_gamma:.3e} "
                  f"q_drift={spec.q_drift:.3e} (residual {result.fit.residual:.3f})")
    print(f"   Report: {path}")
    return EXIT_OK


def parse_seeds(text: str) -> List[int]:
    """Parse '7', '1-20' or '1,2,5' into a list of seeds."""
    seeds: List[int] = []
    try:
        for part in str(text).split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                low, high = (int(v) for v in part.split("-", 1))
                if high < low:
                    raise ValueError(part)
                seeds.extend(range(low, high + 1))
            else:
                seeds.append(int(part))
    except ValueError:
        raise InvalidArgumentError(f"Invalid seed specification: {text!r}")
    if not seeds or any(s < 0 for s in seeds):
        raise InvalidArgumentError(f"Seed specification yields no valid seeds: {text!r}")
    return seeds


def expand_configs(pattern: str) -> List[Path]:
    """Config files matching a glob, falling back to the presets directory."""
    matches = sorted(Path(p) for p in glob.glob(pattern) if Path(p).is_file())
    if not matches:
        presets = Path(Config.PRESETS_DIR)
        matches = sorted(p for p in presets.glob(pattern) if p.is_file())
        if not matches:
            matches = sorted(p for p in presets.glob(f"{pattern}.json") if p.is_file())
    return matches


def _batch_job(config: ScenarioConfig, seed: int, settings: DetectorSettings) -> Dict[str, Any]:
    """Run one (config, seed) pair; failures become error rows."""
    row: Dict[str, Any] = {"config": config.name, "seed": seed}
    run_log = run_logger(logger, config.name, seed)
    try:
        run = run_scenario(config.with_overrides(seed=seed), settings=settings)
        row.update(run.metrics.to_dict())
        row["status"] = "ok"
    except ClockGuardError as e:
        run_log.error(f"Batch job failed: {e}")
        row.update(status="error", error=str(e), exit_code=e.exit_code)
    except Exception as e:
        run_log.error(f"Batch job crashed: {e}", exc_info=True)
        row.update(status="error", error=str(e), exit_code=1)
    return row


def _collect_rows(futures: Sequence[Any],
                  jobs: Sequence[Tuple[ScenarioConfig, int]]) -> List[Dict[str, Any]]:
    """Gather worker results in job order; a lost worker becomes an error row."""
    rows = []
    for future, (config, seed) in zip(futures, jobs):
        try:
            rows.append(future.result())
        except Exception as e:
            run_logger(logger, config.name, seed).error(f"Batch worker lost: {e!r}")
            rows.append({"config": config.name, "seed": seed, "status": "error",
                         "error": repr(e), "exit_code": 1})
    return rows


def cmd_batch(config_glob: str, seeds: str, out_dir: Optional[str] = None,
              multiplier: float = Config.DEFAULT_MULTIPLIER,
              workers: Optional[int] = None,
              confirm_epochs: int = Config.DEFAULT_CONFIRM_EPOCHS,
              warmup: float = Config.DEFAULT_WARMUP) -> int:
    """
    Simulate and detect for every (config, seed) pair in parallel.

    Args:
        config_glob: Glob over config files (or preset names)
        seeds: Seed specification, e.g. '1-20'
        out_dir: Output directory
        multiplier: Alarm multiplier
        workers: Process count (Config.BATCH_WORKERS, then CPU count, if omitted)

    Returns:
        int: Exit code (nonzero if any run failed; partial results are written)
    """
    paths = expand_configs(config_glob)
    if not paths:
        raise ConfigError(f"No scenario configs match '{config_glob}'")
    seed_list = parse_seeds(seeds)
    configs = [load_scenario_config(path) for path in paths]
    settings = DetectorSettings(multiplier, confirm_epochs, warmup)

    jobs = [(config, seed) for config in configs for seed in seed_list]
    workers = workers or Config.BATCH_WORKERS or os.cpu_count() or 1
    logger.info(f"Batch: {len(configs)} config(s) x {len(seed_list)} seed(s) on {workers} worker(s)")

    if workers == 1:
        rows = [_batch_job(config, seed, settings) for config, seed in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_batch_job, config, seed, settings) for config, seed in jobs]
            rows = _collect_rows(futures, jobs)

    store = TraceStore(out_dir)
    table_path = write_metrics_table(rows, store.out_dir / "batch_metrics.csv")
    summary = summarize_batch(rows)
    summary_path = write_summary_table(summary, store.out_dir / "batch_summary.csv")
    write_json({"tool": Config.TOOL_NAME, "tool_version": Config.TOOL_VERSION,
                "multiplier": multiplier, "seeds": seed_list, "summary": summary},
               store.out_dir / "batch_summary.json")

    failures = [row for row in rows if row["status"] != "ok"]
    print(f"{'✅' if not failures else '❌'} Batch finished: {len(rows) - len(failures)}/{len(rows)} runs ok")
    for entry in summary:
        print(f"   {entry['config']}: median latency {entry['detection_latency_median']}, "
              f"false positives {entry['total_false_positives']}")
    print(f"   Table:   {table_path}")
    print(f"   Summary: {summary_path}")
    if failures:
        return max(int(row.get("exit_code", 1)) for row in failures)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clockguard",
        description="Clock-ensemble detection of GNSS time attacks",
    )
    parser.add_argument("--show-config", action="store_true", help="print configuration and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="simulate a scenario to a trace CSV")
    p.add_argument("--config", required=True, help="scenario config file or preset name")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("detect", help="run filter and detector over a trace")
    p.add_argument("--trace", required=True, help="trace CSV or measurement CSV")
    p.add_argument("--config", default=None, help="scenario config (default: echo next to trace)")
    p.add_argument("--calibration", default=None,
                   help="calibration JSON, shipped calibration name, or benign trace CSV")
    p.add_argument("--multiplier", type=float, default=None, help="alarm multiplier (sigma)")
    p.add_argument("--confirm", type=int, default=Config.DEFAULT_CONFIRM_EPOCHS,
                   help="consecutive epochs required for an alarm")
    p.add_argument("--warmup", type=float, default=Config.DEFAULT_WARMUP,
                   help="seconds without alarms after the first epoch")
    p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("characterize", help="stability analysis of each local clock")
    p.add_argument("--trace", required=True, help="trace CSV")
    p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("batch", help="simulate and detect over configs x seeds")
    p.add_argument("--config", required=True, help="glob over config files or preset names")
    p.add_argument("--seeds", default="1-20", help="seeds, e.g. '1-20' or '1,2,3'")
    p.add_argument("--multiplier", type=float, default=Config.DEFAULT_MULTIPLIER)
    p.add_argument("--confirm", type=int, default=Config.DEFAULT_CONFIRM_EPOCHS)
    p.add_argument("--warmup", type=float, default=Config.DEFAULT_WARMUP)
    p.add_argument("--workers", type=int, default=None, help="process pool size")
    p.add_argument("--out", default=None, help="output directory")
    return parser


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.seed)
    if args.command == "detect":
        return cmd_detect(args.trace, args.calibration, args.out, args.config,
                          args.multiplier, args.confirm, args.warmup)
    if args.command == "characterize":
        return cmd_characterize(args.trace, args.out)
    if args.command == "batch":
        return cmd_batch(args.config, args.seeds, args.out, args.multiplier, args.workers,
                         args.confirm, args.warmup)
    raise InvalidArgumentError(f"Unknown command: {args.command}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run a command and map failures to exit codes.

    Args:
        argv: Argument list (sys.argv[1:] if omitted)

    Returns:
        int: Process exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    if args.show_config:
        Config.display()
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE

    try:
        Config.validate()
        return dispatch(args)
    except ClockGuardError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} I/O failure: {e}", exc_info=True)
        print(f"❌ I/O error: {e}")
        return EXIT_IO
    except np.linalg.LinAlgError as e:
        logger.error(f"{args.command} numerical failure: {e}", exc_info=True)
        print(f"❌ Numerical error: {e}")
        return EXIT_NUMERICAL
    except ValueError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"❌ {e}")
        return EXIT_USAGE
