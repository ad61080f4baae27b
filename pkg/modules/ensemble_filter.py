"""
Ensemble Filter Module - Kalman filter over a GNSS-disciplined clock and
N-1 free-running local oscillators.

State layout: clock k occupies slots 3k..3k+2 (phase, frequency, drift);
clock 0 is the GNSS-disciplined clock. Measurements are the phase
differences theta_0 - theta_i for i = 1..N-1.

Only differences between clocks are observable. After every update the
estimate and covariance are projected onto the frame in which the mean of
the local clocks is zero, so that the common-mode variance cannot grow
without bound and clock 0 directly holds the GNSS-minus-ensemble offset.
"""
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from modules.clock_model import NoiseSpec, process_noise_block, transition_block
from utils.errors import InvalidArgumentError, NumericalError
from utils.logger import setup_logger
from utils.validators import is_symmetric_psd, require_non_negative, require_positive

logger = setup_logger(__name__)

# Innovation covariances above this condition number are treated as singular
MAX_CONDITION = 1e14
STATES_PER_CLOCK = 3


@dataclass(frozen=True)
class FilterModel:
    """Clock noise densities, nominal step and measurement noise variance."""

    clock_specs: Tuple[NoiseSpec, ...]
    tau: float = 1.0
    r_diag: float = 0.0

    def __post_init__(self):
        specs = tuple(self.clock_specs)
        if len(specs) < 2:
            raise InvalidArgumentError(f"Ensemble needs at least 2 clocks, got {len(specs)}")
        if not all(isinstance(s, NoiseSpec) for s in specs):
            raise InvalidArgumentError("clock_specs must be NoiseSpec instances")
        object.__setattr__(self, "clock_specs", specs)
        object.__setattr__(self, "tau", require_positive("tau", self.tau))
        object.__setattr__(self, "r_diag", require_non_negative("r_diag", self.r_diag))

    @property
    def num_clocks(self) -> int:
        return len(self.clock_specs)

    @property
    def state_dim(self) -> int:
        return STATES_PER_CLOCK * self.num_clocks

    def transition_matrix(self, tau: Optional[float] = None) -> np.ndarray:
        block = transition_block(self.tau if tau is None else tau)
        return linalg.block_diag(*([block] * self.num_clocks))

    def process_noise(self, tau: Optional[float] = None) -> np.ndarray:
        """Block-diagonal process-noise densities integrated over one step."""
        step = self.tau if tau is None else tau
        return linalg.block_diag(*(process_noise_block(s, step) for s in self.clock_specs))

    def measurement_matrix(self) -> np.ndarray:
        return measurement_matrix(self.num_clocks)

    def measurement_noise(self) -> np.ndarray:
        return self.r_diag * np.eye(self.num_clocks - 1)


@dataclass(frozen=True)
class FilterState:
    """Estimate, covariance and epoch of the last processed step."""

    x_hat: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    epoch: float = 0.0

    @property
    def num_clocks(self) -> int:
        return self.x_hat.size // STATES_PER_CLOCK


class InnovationRecord(NamedTuple):
    """Innovation vector, its covariance and normalized squared innovation."""

    innovation: np.ndarray
    innovation_cov: np.ndarray
    nis: float


class DifferentialEstimate(NamedTuple):
    """GNSS clock phase/frequency relative to the local ensemble."""

    theta_hat: float
    gamma_hat: float
    theta_var: float
    gamma_var: float


def measurement_matrix(num_clocks: int) -> np.ndarray:
    """Rows e_theta(0) - e_theta(i) for i = 1..N-1."""
    h = np.zeros((num_clocks - 1, STATES_PER_CLOCK * num_clocks))
    h[:, 0] = 1.0
    for i in range(1, num_clocks):
        h[i - 1, STATES_PER_CLOCK * i] = -1.0
    return h


def relativization_matrix(num_clocks: int) -> np.ndarray:
    """
    Projection onto the frame where the local-clock mean is zero.

    T = I - U M^T, with U the common-mode directions (each component of every
    clock shifted together) and M the local-clock averaging functionals.
    T is idempotent and leaves every clock difference unchanged.
    """
    if num_clocks < 2:
        raise InvalidArgumentError(f"Ensemble needs at least 2 clocks, got {num_clocks}")
    n = STATES_PER_CLOCK * num_clocks
    common = np.zeros((n, STATES_PER_CLOCK))
    local_mean = np.zeros((n, STATES_PER_CLOCK))
    for c in range(STATES_PER_CLOCK):
        common[c::STATES_PER_CLOCK, c] = 1.0
        local_mean[STATES_PER_CLOCK + c::STATES_PER_CLOCK, c] = 1.0 / (num_clocks - 1)
    return np.eye(n) - common @ local_mean.T


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def _clip_to_psd(p: np.ndarray) -> np.ndarray:
    """
    Nearest PSD matrix in the Frobenius norm: negative eigenvalues set to zero.

    From P0 = I with measurement variances near 1e-18 s^2 the posterior falls
    by many decades in a few epochs, and rounding against the O(1) prior
    leaves eigenvalues far below zero relative to the new trace.
    """
    eigvals, eigvecs = np.linalg.eigh(p)
    if eigvals[0] >= 0.0:
        return p
    logger.debug(f"Clipping covariance eigenvalues down to {eigvals[0]:.3e}")
    return _symmetrize((eigvecs * np.clip(eigvals, 0.0, None)) @ eigvecs.T)


def _check_covariance(p: np.ndarray, stage: str) -> None:
    if not is_symmetric_psd(p):
        min_eig = float(np.linalg.eigvalsh(_symmetrize(p))[0]) if np.all(np.isfinite(p)) else float("nan")
        logger.error(f"Covariance lost PSD after {stage}: min eigenvalue {min_eig:.3e}")
        raise NumericalError(f"covariance is not symmetric PSD after {stage}")


def build_filter(model: FilterModel) -> FilterState:
    """
    Fresh filter: zero estimate, identity covariance, epoch 0.

    Args:
        model: Filter model

    Returns:
        FilterState: Initial state
    """
    logger.debug(f"Building filter for {model.num_clocks} clocks, tau={model.tau}")
    return FilterState(np.zeros(model.state_dim), np.eye(model.state_dim), 0.0)


def predict(state: FilterState, model: FilterModel, tau: Optional[float] = None) -> FilterState:
    """
    Time update over one step.

    Args:
        state: Current filter state
        model: Filter model
        tau: Step length (model.tau if omitted)

    Returns:
        FilterState: Predicted state at epoch + tau
    """
    step = model.tau if tau is None else require_positive("tau", tau)
    _check_dimensions(state, model)
    phi = model.transition_matrix(step)
    x_hat = phi @ state.x_hat
    p = _symmetrize(phi @ state.p @ phi.T + model.process_noise(step))
    return FilterState(x_hat, p, state.epoch + step)


def update(state: FilterState, z: Sequence[float],
           model: FilterModel) -> Tuple[FilterState, InnovationRecord]:
    """
    Measurement update (Joseph form) followed by the rebase.

    Entries of z that are NaN are treated as missing; the update then uses
    only the available measurement rows.

    Args:
        state: Predicted filter state
        z: Measurement vector of length N-1
        model: Filter model

    Returns:
        Tuple[FilterState, InnovationRecord]: Updated state and innovation
    """
    _check_dimensions(state, model)
    z = np.asarray(z, dtype=float)
    if z.shape != (model.num_clocks - 1,):
        raise InvalidArgumentError(
            f"Measurement must have {model.num_clocks - 1} entries, got shape {z.shape}"
        )
    if np.any(np.isinf(z)):
        raise InvalidArgumentError("Measurement contains infinite values")

    available = np.isfinite(z)
    if not np.any(available):
        raise InvalidArgumentError("Measurement has no finite entries")

    h = model.measurement_matrix()[available]
    r = model.measurement_noise()[np.ix_(available, available)]
    z_used = z[available]

    innovation = z_used - h @ state.x_hat
    c = _symmetrize(h @ state.p @ h.T + r)
    condition = float(np.linalg.cond(c)) if np.all(np.isfinite(c)) else float("inf")
    if np.isnan(condition):
        condition = float("inf")
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        logger.error(f"Singular innovation covariance at epoch {state.epoch}: cond={condition:.3e}")
        raise NumericalError("innovation covariance is singular", condition=condition)
    try:
        c_factor = linalg.cho_factor(c, lower=True)
    except linalg.LinAlgError as e:
        raise NumericalError(f"innovation covariance is not positive definite: {e}",
                             condition=condition) from e

    # K = P H^T C^-1, computed as (C^-1 H P)^T
    gain = linalg.cho_solve(c_factor, h @ state.p).T
    nis = float(innovation @ linalg.cho_solve(c_factor, innovation))

    x_hat = state.x_hat + gain @ innovation
    joseph = np.eye(model.state_dim) - gain @ h
    p = _symmetrize(joseph @ state.p @ joseph.T + gain @ r @ gain.T)

    rebased = rebase_covariance(FilterState(x_hat, p, state.epoch))
    if not np.all(np.isfinite(rebased.p)):
        raise NumericalError("covariance became non-finite after update", condition=condition)
    updated = FilterState(rebased.x_hat, _clip_to_psd(rebased.p), rebased.epoch)
    _check_covariance(updated.p, "update")

    full_innovation = np.full(z.shape, np.nan)
    full_innovation[available] = innovation
    return updated, InnovationRecord(full_innovation, c, nis)


def rebase_covariance(state: FilterState) -> FilterState:
    """
    Project estimate and covariance onto the local-mean-zero frame.

    Every differential quantity (any combination of states orthogonal to the
    common mode) keeps its estimate and variance; the unobservable common mode
    is removed entirely.

    Args:
        state: Filter state

    Returns:
        FilterState: Rebased state (same epoch)
    """
    t = relativization_matrix(state.num_clocks)
    x_hat = t @ state.x_hat
    p = _symmetrize(t @ state.p @ t.T)
    return FilterState(x_hat, p, state.epoch)


def gnss_differential_estimate(state: FilterState) -> DifferentialEstimate:
    """GNSS clock phase and frequency relative to the local ensemble, with variances."""
    return DifferentialEstimate(
        float(state.x_hat[0]),
        float(state.x_hat[1]),
        float(state.p[0, 0]),
        float(state.p[1, 1]),
    )


def _check_dimensions(state: FilterState, model: FilterModel) -> None:
    if state.x_hat.shape != (model.state_dim,) or state.p.shape != (model.state_dim, model.state_dim):
        raise InvalidArgumentError(
            f"Filter state dimension {state.x_hat.shape} does not match model with "
            f"{model.num_clocks} clocks"
        )


class EnsembleFilter:
    """Stateful wrapper holding the model and the current filter state."""

    def __init__(self, model: FilterModel):
        """
        Initialize a fresh filter.

        Args:
            model: Filter model
        """
        self.model = model
        self.state = build_filter(model)
        self.started = False
        self.last_innovation: Optional[InnovationRecord] = None

    def step(self, z: Optional[Sequence[float]]) -> DifferentialEstimate:
        """
        Process one epoch.

        The first epoch is update-only (the prior refers to it). Afterwards a
        predict runs before every update; z=None is a missed measurement and
        runs the predict only.

        Args:
            z: Measurement vector or None

        Returns:
            DifferentialEstimate: Estimate after this epoch
        """
        if self.started:
            self.state = predict(self.state, self.model)
        self.started = True
        self.last_innovation = None
        if z is not None and np.any(np.isfinite(np.asarray(z, dtype=float))):
            self.state, self.last_innovation = update(self.state, z, self.model)
        return gnss_differential_estimate(self.state)

    def coast(self, steps: int) -> None:
        """Run predict-only steps across a measurement gap."""
        for _ in range(int(steps)):
            self.state = predict(self.state, self.model)
