"""
Detector Module - Phase and frequency tests on the GNSS-minus-ensemble estimates.

A benign calibration gives the standard deviations of the phase and frequency
estimates. At each epoch the estimates are compared against multiplier times
those deviations, and the pair of alarms is mapped onto a decision matrix:
both out means an attack in progress, phase only means the attacker has
reached a stable offset, frequency only is an ambiguous anomaly.
"""
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config.config import Config
from utils.errors import InvalidArgumentError
from utils.logger import setup_logger
from utils.validators import require_finite_array, require_non_negative, require_positive

logger = setup_logger(__name__)


@dataclass(frozen=True)
class CalibrationResult:
    """Benign standard deviations of the estimates and the alarm multiplier."""

    sigma_theta: float
    sigma_gamma: float
    multiplier: float = Config.DEFAULT_MULTIPLIER
    source: str = "computed"
    num_samples: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sigma_theta", require_positive("sigma_theta", self.sigma_theta))
        object.__setattr__(self, "sigma_gamma", require_positive("sigma_gamma", self.sigma_gamma))
        object.__setattr__(self, "multiplier", require_positive("multiplier", self.multiplier))

    @property
    def theta_threshold(self) -> float:
        return self.multiplier * self.sigma_theta

    @property
    def gamma_threshold(self) -> float:
        return self.multiplier * self.sigma_gamma

    def with_multiplier(self, multiplier: float) -> "CalibrationResult":
        return CalibrationResult(self.sigma_theta, self.sigma_gamma, multiplier,
                                 self.source, self.num_samples)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CalibrationResult":
        if not isinstance(data, dict):
            raise InvalidArgumentError("Calibration must be a JSON object")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"Unknown calibration keys: {sorted(unknown)}")
        missing = {"sigma_theta", "sigma_gamma"} - set(data)
        if missing:
            raise InvalidArgumentError(f"Calibration is missing: {sorted(missing)}")
        return cls(**{"source": "external", **data})


# Published receiver calibrations (static and mobile)
STATIC_REFERENCE = CalibrationResult(5.5834e-08, 1.4109e-09, source="static-reference")
MOBILE_REFERENCE = CalibrationResult(3.5606e-08, 2.2561e-09, source="mobile-reference")


class Classification(str, Enum):
    NOMINAL = "Nominal"
    ACTIVE_ATTACK = "ActiveAttack"
    PERSISTENT_OFFSET = "PersistentOffset"
    FREQUENCY_ANOMALY = "FrequencyAnomaly"


@dataclass(frozen=True)
class DetectionVerdict:
    epoch: float
    phase_alarm: bool
    freq_alarm: bool
    classification: Classification
    in_warmup: bool = False


@dataclass(frozen=True)
class RunMetrics:
    """Detection metrics of one run."""

    first_alarm_epoch: Optional[float]
    detection_latency: Optional[float]
    offset_at_detection: Optional[float]
    false_positive_count: int
    first_phase_alarm_epoch: Optional[float] = None
    first_freq_alarm_epoch: Optional[float] = None
    phase_alarm_count: int = 0
    freq_alarm_count: int = 0
    blind_spot: bool = False
    outcome: str = "true_negative"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def calibrate(theta_hat: Sequence[float], gamma_hat: Sequence[float],
              multiplier: float = Config.DEFAULT_MULTIPLIER) -> CalibrationResult:
    """
    Compute benign standard deviations of the two estimate series.

    Args:
        theta_hat: Benign phase estimates (seconds)
        gamma_hat: Benign frequency estimates (s/s)
        multiplier: Alarm multiplier

    Returns:
        CalibrationResult: Sample standard deviations and multiplier
    """
    theta = require_finite_array("theta_hat", theta_hat)
    gamma = require_finite_array("gamma_hat", gamma_hat)
    if theta.size != gamma.size:
        raise InvalidArgumentError(
            f"Estimate series lengths differ: {theta.size} vs {gamma.size}"
        )
    if theta.size < Config.MIN_CALIBRATION_EPOCHS:
        raise InvalidArgumentError(
            f"Calibration needs at least {Config.MIN_CALIBRATION_EPOCHS} benign epochs, "
            f"got {theta.size}"
        )
    sigma_theta = float(np.std(theta, ddof=1))
    sigma_gamma = float(np.std(gamma, ddof=1))
    if sigma_theta <= 0.0 or sigma_gamma <= 0.0:
        raise InvalidArgumentError("Benign estimates have zero variance; calibration is degenerate")

    result = CalibrationResult(sigma_theta, sigma_gamma, multiplier, "computed", int(theta.size))
    logger.info(
        f"Calibrated on {theta.size} epochs: sigma_theta={sigma_theta:.4e} s, "
        f"sigma_gamma={sigma_gamma:.4e}, multiplier={multiplier:g}"
    )
    return result


def phase_test(theta_hat: float, cal: CalibrationResult) -> bool:
    """True iff |theta_hat| is strictly beyond multiplier * sigma_theta."""
    return bool(abs(theta_hat) > cal.multiplier * cal.sigma_theta)


def frequency_test(gamma_hat: float, cal: CalibrationResult) -> bool:
    """True iff |gamma_hat| is strictly beyond multiplier * sigma_gamma."""
    return bool(abs(gamma_hat) > cal.multiplier * cal.sigma_gamma)


_DECISION_MATRIX = {
    (True, True): Classification.ACTIVE_ATTACK,
    (True, False): Classification.PERSISTENT_OFFSET,
    (False, True): Classification.FREQUENCY_ANOMALY,
    (False, False): Classification.NOMINAL,
}


def classify(phase_alarm: bool, freq_alarm: bool) -> Classification:
    return _DECISION_MATRIX[(bool(phase_alarm), bool(freq_alarm))]


class AttackDetector:
    """
    Streaming dual test with warm-up and k-consecutive confirmation.

    An alarm is raised once its raw test has fired on `confirm_epochs`
    consecutive epochs. Epochs before `warmup` seconds never alarm.
    """

    def __init__(self, calibration: CalibrationResult,
                 confirm_epochs: int = Config.DEFAULT_CONFIRM_EPOCHS,
                 warmup: float = Config.DEFAULT_WARMUP):
        if int(confirm_epochs) != confirm_epochs or confirm_epochs < 1:
            raise InvalidArgumentError(f"confirm_epochs must be a positive integer, got {confirm_epochs}")
        self.calibration = calibration
        self.confirm_epochs = int(confirm_epochs)
        self.warmup = require_non_negative("warmup", warmup)
        self._start_epoch: Optional[float] = None
        self._phase_run = 0
        self._freq_run = 0

    def reset(self) -> None:
        self._start_epoch = None
        self._phase_run = 0
        self._freq_run = 0

    def evaluate(self, epoch: float, theta_hat: float, gamma_hat: float) -> DetectionVerdict:
        """
        Test one epoch.

        Args:
            epoch: Epoch in seconds
            theta_hat: Phase estimate
            gamma_hat: Frequency estimate

        Returns:
            DetectionVerdict: Alarm flags and classification
        """
        if self._start_epoch is None:
            self._start_epoch = epoch
        if epoch - self._start_epoch < self.warmup:
            return DetectionVerdict(epoch, False, False, Classification.NOMINAL, True)

        self._phase_run = self._phase_run + 1 if phase_test(theta_hat, self.calibration) else 0
        self._freq_run = self._freq_run + 1 if frequency_test(gamma_hat, self.calibration) else 0
        phase_alarm = self._phase_run >= self.confirm_epochs
        freq_alarm = self._freq_run >= self.confirm_epochs
        return DetectionVerdict(epoch, phase_alarm, freq_alarm, classify(phase_alarm, freq_alarm))

    def run(self, epochs: Sequence[float], theta_hat: Sequence[float],
            gamma_hat: Sequence[float]) -> List[DetectionVerdict]:
        """Evaluate whole series from a fresh detector state."""
        epochs = np.asarray(epochs, dtype=float)
        theta_hat = np.asarray(theta_hat, dtype=float)
        gamma_hat = np.asarray(gamma_hat, dtype=float)
        if not (epochs.size == theta_hat.size == gamma_hat.size):
            raise InvalidArgumentError("Epoch and estimate series must have equal length")
        self.reset()
        return [self.evaluate(float(e), float(t), float(g))
                for e, t, g in zip(epochs, theta_hat, gamma_hat)]


def evaluate_run(verdicts: Sequence[DetectionVerdict], attack_truth: Sequence[float],
                 attack_start: Optional[float]) -> RunMetrics:
    """
    Compute detection metrics.

    Alarms before the attack start (or anywhere in a benign run) count as
    false positives. Latency and offset refer to the first alarm at or after
    the attack start; the offset is read at the first phase alarm.

    Args:
        verdicts: Per-epoch verdicts
        attack_truth: Injected offset per epoch
        attack_start: Attack start epoch, None for benign runs

    Returns:
        RunMetrics: Detection metrics
    """
    truth = np.asarray(attack_truth, dtype=float)
    if len(verdicts) != truth.size:
        raise InvalidArgumentError(
            f"Verdicts ({len(verdicts)}) and attack truth ({truth.size}) are misaligned"
        )

    epochs = np.array([v.epoch for v in verdicts], dtype=float)
    phase = np.array([v.phase_alarm for v in verdicts], dtype=bool)
    freq = np.array([v.freq_alarm for v in verdicts], dtype=bool)
    any_alarm = phase | freq

    blind_spot = False
    if attack_start is None:
        attacked = np.zeros(epochs.size, dtype=bool)
    else:
        attacked = epochs >= attack_start
        if epochs.size and attack_start <= epochs[0]:
            blind_spot = True
            logger.warning(
                f"Attack starts at {attack_start:g} s, at or before the first epoch "
                f"{epochs[0]:g} s; the absolute offset is invisible to the filter"
            )

    false_positives = int(np.count_nonzero(any_alarm & ~attacked))

    def first(mask: np.ndarray) -> Optional[int]:
        hits = np.flatnonzero(mask)
        return int(hits[0]) if hits.size else None

    first_alarm = first(any_alarm & attacked) if attack_start is not None else first(any_alarm)
    first_phase = first(phase & attacked) if attack_start is not None else first(phase)
    first_freq = first(freq & attacked) if attack_start is not None else first(freq)

    latency = None
    offset = None
    if attack_start is not None and first_alarm is not None:
        latency = max(0.0, float(epochs[first_alarm] - attack_start))
        if first_phase is not None:
            offset = float(truth[first_phase])

    if attack_start is None:
        outcome = "false_positive" if false_positives else "true_negative"
    else:
        outcome = "true_positive" if first_alarm is not None else "false_negative"

    return RunMetrics(
        first_alarm_epoch=float(epochs[first_alarm]) if first_alarm is not None else None,
        detection_latency=latency,
        offset_at_detection=offset,
        false_positive_count=false_positives,
        first_phase_alarm_epoch=float(epochs[first_phase]) if first_phase is not None else None,
        first_freq_alarm_epoch=float(epochs[first_freq]) if first_freq is not None else None,
        phase_alarm_count=int(np.count_nonzero(phase)),
        freq_alarm_count=int(np.count_nonzero(freq)),
        blind_spot=blind_spot,
        outcome=outcome,
    )
