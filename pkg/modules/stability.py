"""
Stability Module - Hadamard and Allan variance plus noise-density fitting.

Frequency stability comes from the non-overlapping allantools estimators
applied to the fractional frequency series. The Hadamard variance is
insensitive to linear frequency drift, which makes it the estimator of choice
for fitting the three noise densities of the clock model.
"""
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import allantools
import numpy as np
from scipy.optimize import nnls

from modules.clock_model import NoiseSpec
from utils.errors import InvalidArgumentError
from utils.logger import setup_logger
from utils.validators import require_finite_array, require_positive

logger = setup_logger(__name__)

HADAMARD = "hadamard"
ALLAN = "allan"

# Coefficient of the drift random-walk term in the Hadamard variance
_DRIFT_COEFFICIENT = 11.0 / 120.0
_REWEIGHT_ITERATIONS = 5


@dataclass(frozen=True)
class FrequencySeries:
    """Evenly sampled fractional frequency values."""

    values: np.ndarray = field(repr=False)
    tau0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "values", require_finite_array("values", self.values))
        object.__setattr__(self, "tau0", require_positive("tau0", self.tau0))

    def __len__(self) -> int:
        return int(self.values.size)


class StabilityPoint(NamedTuple):
    """One estimated variance at averaging time tau."""

    tau: float
    variance: float
    num_terms: int
    kind: str = HADAMARD

    @property
    def hadamard_var(self) -> float:
        if self.kind != HADAMARD:
            raise InvalidArgumentError(f"Point holds a {self.kind} variance")
        return self.variance

    @property
    def deviation(self) -> float:
        return float(np.sqrt(self.variance))


class NoiseFit(NamedTuple):
    """Fitted noise densities and log-domain RMS misfit."""

    spec: NoiseSpec
    residual: float


def phase_to_frequency(phase: Sequence[float], tau0: float) -> FrequencySeries:
    """
    Convert phase samples to fractional frequency by first differences.

    Args:
        phase: Phase samples in seconds
        tau0: Sample interval in seconds

    Returns:
        FrequencySeries: len(phase) - 1 values
    """
    phase = require_finite_array("phase", phase)
    tau0 = require_positive("tau0", tau0)
    if phase.size < 2:
        raise InvalidArgumentError("At least 2 phase samples are needed")
    return FrequencySeries(np.diff(phase) / tau0, tau0)


def _check_factor(series: FrequencySeries, m: int, minimum_blocks: int) -> int:
    if int(m) != m or m < 1:
        raise InvalidArgumentError(f"Averaging factor must be a positive integer, got {m}")
    m = int(m)
    if len(series) < minimum_blocks * m:
        raise InvalidArgumentError(
            f"Series of length {len(series)} too short for averaging factor {m} "
            f"(needs {minimum_blocks * m})"
        )
    return m


def _deviation(estimator, series: FrequencySeries, m: int, kind: str) -> StabilityPoint:
    # Deviations do not depend on the rate for frequency data, so the factor is
    # passed as tau at unit rate and reaches allantools without rounding
    taus, devs, _, counts = estimator(series.values, rate=1.0, data_type="freq",
                                      taus=[float(m)])
    if len(taus) != 1 or int(round(taus[0])) != m:
        raise InvalidArgumentError(f"allantools dropped averaging factor {m} for {kind}")
    return StabilityPoint(m * series.tau0, float(devs[0]) ** 2, int(counts[0]), kind)


def hadamard_variance(series: FrequencySeries, m: int) -> StabilityPoint:
    """
    Non-overlapping Hadamard variance at averaging factor m.

    Args:
        series: Fractional frequency series
        m: Averaging factor (tau = m * tau0)

    Returns:
        StabilityPoint: Variance and number of second differences used
    """
    return _deviation(allantools.hdev, series, _check_factor(series, m, 3), HADAMARD)


def allan_variance(series: FrequencySeries, m: int) -> StabilityPoint:
    """Non-overlapping Allan variance at averaging factor m."""
    return _deviation(allantools.adev, series, _check_factor(series, m, 2), ALLAN)


def octave_factors(n: int) -> List[int]:
    """Averaging factors 1, 2, 4, ... up to a tenth of the series length."""
    limit = max(1, n // 10)
    factors = []
    m = 1
    while m <= limit:
        factors.append(m)
        m *= 2
    return factors


def stability_curve(series: FrequencySeries, kind: str = HADAMARD,
                    factors: Optional[Sequence[int]] = None) -> List[StabilityPoint]:
    """
    Evaluate a variance estimator over a grid of averaging factors.

    Args:
        series: Fractional frequency series
        kind: "hadamard" or "allan"
        factors: Averaging factors (octave grid by default)

    Returns:
        List[StabilityPoint]: One point per factor
    """
    estimators = {HADAMARD: hadamard_variance, ALLAN: allan_variance}
    if kind not in estimators:
        raise InvalidArgumentError(f"Unknown stability estimator: {kind}")
    factors = octave_factors(len(series)) if factors is None else factors
    return [estimators[kind](series, m) for m in factors]


def _design_matrix(taus: np.ndarray) -> np.ndarray:
    return np.column_stack((1.0 / taus, taus / 6.0, _DRIFT_COEFFICIENT * taus ** 3))


def _weighted_nnls(design: np.ndarray, target: np.ndarray, scale: np.ndarray,
                   terms: np.ndarray) -> np.ndarray:
    row_weight = np.sqrt(terms) / scale
    a = design * row_weight[:, None]
    b = target * row_weight
    col_norm = np.linalg.norm(a, axis=0)
    col_norm[col_norm == 0.0] = 1.0
    solution, _ = nnls(a / col_norm, b)
    return solution / col_norm


def fit_noise_coefficients(points: Sequence[StabilityPoint]) -> NoiseFit:
    """
    Fit the three noise densities to Hadamard variance points.

    Model: sigma_H^2(tau) = q_theta/tau + q_gamma*tau/6 + 11/120*q_drift*tau^3.
    Non-negative least squares on relative residuals, re-weighted from the
    fitted model so that noisy low points do not pull the fit down.

    Args:
        points: At least 3 Hadamard points spanning a decade of tau

    Returns:
        NoiseFit: Densities and log-domain RMS misfit
    """
    points = list(points)
    if len(points) < 3:
        raise InvalidArgumentError(f"At least 3 stability points are needed, got {len(points)}")
    if any(p.kind != HADAMARD for p in points):
        raise InvalidArgumentError("Noise fit requires Hadamard variance points")

    taus = np.array([p.tau for p in points], dtype=float)
    variances = np.array([p.variance for p in points], dtype=float)
    terms = np.array([max(p.num_terms, 1) for p in points], dtype=float)
    if np.any(taus <= 0) or not np.all(np.isfinite(variances)) or np.any(variances < 0):
        raise InvalidArgumentError("Stability points must have positive tau and finite variance")
    if taus.max() < 10.0 * taus.min():
        raise InvalidArgumentError(
            f"Stability points must span at least a decade of tau "
            f"({taus.min():g} to {taus.max():g})"
        )

    if not np.any(variances > 0):
        return NoiseFit(NoiseSpec(), 0.0)

    design = _design_matrix(taus)
    positive = variances[variances > 0]
    scale = np.where(variances > 0, variances, positive.min())
    q = _weighted_nnls(design, variances, scale, terms)
    for _ in range(_REWEIGHT_ITERATIONS):
        model = design @ q
        if not np.all(model > 0):
            break
        q = _weighted_nnls(design, variances, model, terms)

    spec = NoiseSpec(*q)
    model = design @ q
    usable = (variances > 0) & (model > 0)
    if np.any(usable):
        misfit = 0.5 * np.log(variances[usable] / model[usable])
        residual = float(np.sqrt(np.mean(misfit ** 2)))
    else:
        residual = float("inf")
    logger.debug(f"Noise fit over {len(points)} points: {spec}, residual {residual:.3f}")
    return NoiseFit(spec, residual)


@dataclass
class ClockCharacterization:
    """Stability curves and fitted noise of one phase series."""

    hadamard: List[StabilityPoint]
    allan: List[StabilityPoint]
    fit: Optional[NoiseFit]


def characterize_phase(phase: Sequence[float], tau0: float) -> ClockCharacterization:
    """
    Hadamard and Allan curves on the octave grid plus a noise fit.

    Args:
        phase: Phase samples in seconds
        tau0: Sample interval in seconds

    Returns:
        ClockCharacterization: Curves and fit (fit is None if the grid spans
        less than a decade)
    """
    series = phase_to_frequency(phase, tau0)
    factors = octave_factors(len(series))
    hadamard = stability_curve(series, HADAMARD, factors)
    allan = stability_curve(series, ALLAN, factors)
    fit = None
    if len(hadamard) >= 3 and factors[-1] >= 10 * factors[0]:
        fit = fit_noise_coefficients(hadamard)
    else:
        logger.warning(f"Series of {len(series)} samples too short for a noise fit")
    return ClockCharacterization(hadamard, allan, fit)
