"""
Ensemble Runner Module - Coordinates simulation, filtering and detection.

Holds the shared flow used by the CLI commands and batch workers: build the
filter model for a scenario, run the ensemble filter over a measurement log,
calibrate on a benign run and evaluate an attack run.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from config.config import Config
from modules.detector import (AttackDetector, CalibrationResult, DetectionVerdict, RunMetrics,
                              calibrate, evaluate_run)
from modules.ensemble_filter import EnsembleFilter, FilterModel
from modules.scenario import MeasurementLog, ScenarioConfig, TraceSet, measurement_log, simulate
from utils.errors import InvalidArgumentError, InvalidDataError
from utils.logger import run_logger, setup_logger

logger = setup_logger(__name__)


@dataclass(frozen=True)
class DetectorSettings:
    """Multiplier, confirmation count and warm-up applied to a calibration."""

    multiplier: float = Config.DEFAULT_MULTIPLIER
    confirm_epochs: int = Config.DEFAULT_CONFIRM_EPOCHS
    warmup: float = Config.DEFAULT_WARMUP


@dataclass
class EstimateSeries:
    """Per-epoch differential estimates and filter consistency data."""

    epochs: np.ndarray
    theta_hat: np.ndarray
    gamma_hat: np.ndarray
    theta_var: np.ndarray
    gamma_var: np.ndarray
    nis: np.ndarray

    def __len__(self) -> int:
        return int(self.epochs.size)

    def after(self, warmup: float) -> "EstimateSeries":
        """Estimates from `warmup` seconds after the first epoch onwards."""
        if self.epochs.size == 0:
            return self
        keep = self.epochs - self.epochs[0] >= warmup
        return EstimateSeries(*(getattr(self, name)[keep] for name in
                                ("epochs", "theta_hat", "gamma_hat", "theta_var", "gamma_var", "nis")))


@dataclass
class ScenarioRun:
    """Everything produced by one simulated and evaluated run."""

    config: ScenarioConfig
    traces: TraceSet
    estimates: EstimateSeries
    calibration: CalibrationResult
    verdicts: List[DetectionVerdict] = field(default_factory=list)
    metrics: Optional[RunMetrics] = None


def filter_model_for(config: ScenarioConfig) -> FilterModel:
    """
    Filter model matching a scenario.

    Clock 0 uses the GNSS clock model's filter densities; the measurement
    noise is the uniform quantization variance, floored so the innovation
    covariance stays invertible with exact measurements.
    """
    r_diag = max(config.quantization ** 2 / 12.0, Config.MIN_MEASUREMENT_VARIANCE)
    specs = (config.gnss.filter_spec(config.tau),) + tuple(c.noise for c in config.local_clocks)
    return FilterModel(specs, config.tau, r_diag)


def run_filter(log: MeasurementLog, model: FilterModel) -> EstimateSeries:
    """
    Run the ensemble filter over a measurement log.

    Epoch gaps that are multiples of the model step are bridged with
    predict-only steps; all-NaN rows are predict-only epochs.

    Args:
        log: Measurements
        model: Filter model (clock count must match the log)

    Returns:
        EstimateSeries: One entry per log epoch
    """
    if log.num_clocks != model.num_clocks:
        raise InvalidDataError(
            f"Measurement log has {log.num_clocks} clocks but the model has {model.num_clocks}"
        )
    n = len(log)
    theta = np.empty(n)
    gamma = np.empty(n)
    theta_var = np.empty(n)
    gamma_var = np.empty(n)
    nis = np.full(n, np.nan)

    ensemble = EnsembleFilter(model)
    for k in range(n):
        if k > 0:
            steps = (log.epochs[k] - log.epochs[k - 1]) / model.tau
            whole = int(round(steps))
            if whole < 1 or abs(steps - whole) > 1e-6:
                raise InvalidDataError(
                    f"Epoch spacing {log.epochs[k] - log.epochs[k - 1]:g} s is not a multiple "
                    f"of the filter step {model.tau:g} s"
                )
            if whole > 1:
                logger.debug(f"Bridging {whole - 1} missed epochs before {log.epochs[k]:g} s")
                ensemble.coast(whole - 1)
        estimate = ensemble.step(log.z[k])
        theta[k], gamma[k], theta_var[k], gamma_var[k] = estimate
        if ensemble.last_innovation is not None:
            nis[k] = ensemble.last_innovation.nis

    return EstimateSeries(log.epochs.copy(), theta, gamma, theta_var, gamma_var, nis)


def calibrate_estimates(estimates: EstimateSeries,
                        settings: DetectorSettings = DetectorSettings()) -> CalibrationResult:
    """Calibrate on benign estimates after the warm-up window."""
    settled = estimates.after(settings.warmup)
    return calibrate(settled.theta_hat, settled.gamma_hat, settings.multiplier)


def calibrate_from_benign(config: ScenarioConfig,
                          settings: DetectorSettings = DetectorSettings()) -> CalibrationResult:
    """
    Calibrate on the benign twin of a scenario (no attack, offset seed).

    Args:
        config: Scenario whose clock ensemble should be calibrated
        settings: Detector settings (multiplier, warm-up)

    Returns:
        CalibrationResult: Computed calibration
    """
    twin = config.benign_twin()
    traces = simulate(twin)
    estimates = run_filter(measurement_log(traces, twin.quantization), filter_model_for(twin))
    return calibrate_estimates(estimates, settings)


def resolve_calibration(config: ScenarioConfig,
                        settings: DetectorSettings = DetectorSettings()) -> CalibrationResult:
    """Reference calibration shipped with the config, else a benign-twin calibration."""
    if config.reference_calibration is not None:
        return config.reference_calibration.with_multiplier(settings.multiplier)
    return calibrate_from_benign(config, settings)


def detect(log: MeasurementLog, estimates: EstimateSeries, calibration: CalibrationResult,
           attack_start: Optional[float],
           settings: DetectorSettings = DetectorSettings()):
    """
    Run the detector over an estimate series and score it.

    Returns:
        Tuple[List[DetectionVerdict], RunMetrics]
    """
    if len(estimates) != len(log):
        raise InvalidArgumentError("Estimates and measurement log are misaligned")
    detector = AttackDetector(calibration.with_multiplier(settings.multiplier),
                              settings.confirm_epochs, settings.warmup)
    verdicts = detector.run(estimates.epochs, estimates.theta_hat, estimates.gamma_hat)
    metrics = evaluate_run(verdicts, log.attack_truth, attack_start)
    return verdicts, metrics


def run_scenario(config: ScenarioConfig, calibration: Optional[CalibrationResult] = None,
                 settings: DetectorSettings = DetectorSettings()) -> ScenarioRun:
    """
    Simulate, measure, filter, detect and evaluate one scenario.

    Args:
        config: Scenario to run
        calibration: Calibration to test against (resolved from the config if omitted)
        settings: Detector settings

    Returns:
        ScenarioRun: Traces, estimates, verdicts and metrics
    """
    calibration = calibration or resolve_calibration(config, settings)
    traces = simulate(config)
    log = measurement_log(traces, config.quantization)
    estimates = run_filter(log, filter_model_for(config))
    verdicts, metrics = detect(log, estimates, calibration, config.attack.attack_start, settings)
    run_logger(logger, config.name, config.seed).info(
        f"First alarm {metrics.first_alarm_epoch}, "
        f"latency {metrics.detection_latency}, false positives {metrics.false_positive_count}"
    )
    return ScenarioRun(config, traces, estimates, calibration.with_multiplier(settings.multiplier),
                       verdicts, metrics)
