"""
Clock Model Module - Three-state oscillator model (phase, frequency, drift).

Provides the exact discretization of the continuous clock model: the
transition block, its integrated process-noise block, noise sampling and
state propagation. Also synthesizes flicker frequency noise for oscillators
whose Allan deviation has a flat floor.
"""
from dataclasses import dataclass, asdict
from typing import Optional, Dict, Any

import numpy as np
from scipy import linalg

from utils.errors import InvalidArgumentError, InternalError
from utils.logger import setup_logger
from utils.validators import require_finite, require_non_negative, require_positive

logger = setup_logger(__name__)

# Diagonal jitter added when the process-noise block is rank deficient
FACTOR_JITTER = 1e-30


@dataclass(frozen=True)
class ClockState:
    """Phase [s], frequency [s/s] and drift [1/s] of one clock."""

    theta: float = 0.0
    gamma: float = 0.0
    drift: float = 0.0

    def __post_init__(self):
        for name in ("theta", "gamma", "drift"):
            object.__setattr__(self, name, require_finite(name, getattr(self, name)))

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.gamma, self.drift])

    @classmethod
    def from_array(cls, values: np.ndarray) -> "ClockState":
        values = np.asarray(values, dtype=float)
        if values.shape != (3,):
            raise InvalidArgumentError(f"ClockState needs 3 components, got shape {values.shape}")
        return cls(float(values[0]), float(values[1]), float(values[2]))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ClockState":
        unknown = set(data) - {"theta", "gamma", "drift"}
        if unknown:
            raise InvalidArgumentError(f"Unknown ClockState keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class NoiseSpec:
    """
    White-noise spectral densities driving phase, frequency and drift.

    q_theta is white FM (phase random walk), q_gamma is random-walk FM and
    q_drift is random walk of the drift.
    """

    q_theta: float = 0.0
    q_gamma: float = 0.0
    q_drift: float = 0.0

    def __post_init__(self):
        for name in ("q_theta", "q_gamma", "q_drift"):
            object.__setattr__(self, name, require_non_negative(name, getattr(self, name)))

    @property
    def is_ideal(self) -> bool:
        return self.q_theta == 0.0 and self.q_gamma == 0.0 and self.q_drift == 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.q_theta, self.q_gamma, self.q_drift])

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NoiseSpec":
        unknown = set(data) - {"q_theta", "q_gamma", "q_drift"}
        if unknown:
            raise InvalidArgumentError(f"Unknown NoiseSpec keys: {sorted(unknown)}")
        return cls(**data)


def transition_block(tau: float) -> np.ndarray:
    """
    State transition of one clock over tau seconds.

    Args:
        tau: Step length in seconds (> 0)

    Returns:
        np.ndarray: 3x3 upper triangular transition matrix
    """
    tau = require_positive("tau", tau)
    return np.array([
        [1.0, tau, tau * tau / 2.0],
        [0.0, 1.0, tau],
        [0.0, 0.0, 1.0],
    ])


def process_noise_block(spec: NoiseSpec, tau: float) -> np.ndarray:
    """
    Integrated process-noise covariance of one clock over tau seconds.

    Args:
        spec: Noise densities
        tau: Step length in seconds (> 0)

    Returns:
        np.ndarray: Symmetric PSD 3x3 covariance
    """
    tau = require_positive("tau", tau)
    q1, q2, q3 = spec.q_theta, spec.q_gamma, spec.q_drift
    t2, t3, t4, t5 = tau ** 2, tau ** 3, tau ** 4, tau ** 5

    q11 = q1 * tau + q2 * t3 / 3.0 + q3 * t5 / 20.0
    q12 = q2 * t2 / 2.0 + q3 * t4 / 8.0
    q13 = q3 * t3 / 6.0
    q22 = q2 * tau + q3 * t3 / 3.0
    q23 = q3 * t2 / 2.0
    q33 = q3 * tau

    return np.array([
        [q11, q12, q13],
        [q12, q22, q23],
        [q13, q23, q33],
    ])


def noise_factor(spec: NoiseSpec, tau: float) -> np.ndarray:
    """
    Lower-triangular factor L with L @ L.T equal to the process-noise block.

    Rows and columns with zero variance are excluded from the factorization so
    that components without noise stay exactly zero.
    """
    q = process_noise_block(spec, tau)
    factor = np.zeros((3, 3))
    active = np.flatnonzero(np.diag(q) > 0.0)
    if active.size == 0:
        return factor

    sub = q[np.ix_(active, active)]
    if active.size < 3 or min(spec.q_theta, spec.q_gamma, spec.q_drift) == 0.0:
        sub = sub + FACTOR_JITTER * np.eye(active.size)
    try:
        factor[np.ix_(active, active)] = linalg.cholesky(sub, lower=True)
    except linalg.LinAlgError as e:
        logger.error(f"Process-noise factorization failed for {spec}: {e}")
        raise InternalError(f"process-noise factorization failed: {e}") from e
    return factor


def sample_process_noise(spec: NoiseSpec, tau: float, rng: np.random.Generator,
                         size: Optional[int] = None) -> np.ndarray:
    """
    Draw process-noise vectors with covariance process_noise_block(spec, tau).

    Args:
        spec: Noise densities
        tau: Step length in seconds
        rng: Random generator (the only randomness source)
        size: Number of vectors to draw; None draws a single 3-vector

    Returns:
        np.ndarray: Shape (3,) or (size, 3)
    """
    factor = noise_factor(spec, tau)
    if size is None:
        return factor @ rng.standard_normal(3)
    return rng.standard_normal((int(size), 3)) @ factor.T


def propagate_state(state: ClockState, tau: float,
                    noise: Optional[np.ndarray] = None) -> ClockState:
    """
    Propagate one clock over tau seconds.

    Args:
        state: Current state
        tau: Step length in seconds
        noise: Optional 3-vector added after the deterministic transition

    Returns:
        ClockState: Propagated state
    """
    x = transition_block(tau) @ state.as_array()
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (3,):
            raise InvalidArgumentError(f"noise must be a 3-vector, got shape {noise.shape}")
        x = x + noise
    return ClockState.from_array(x)


def deterministic_phase(theta0: float, gamma: float, drift: float, t: float) -> float:
    """Noise-free phase theta0 + gamma*t + drift*t^2/2."""
    return theta0 + gamma * t + drift * t * t / 2.0


def simulate_clock(spec: NoiseSpec, tau: float, n_steps: int, rng: np.random.Generator,
                   initial: Optional[ClockState] = None) -> np.ndarray:
    """
    Simulate one clock for n_steps steps.

    The transition is triangular, so the recursion unrolls into cumulative
    sums: drift first, then frequency, then phase.

    Args:
        spec: Noise densities
        tau: Step length in seconds
        n_steps: Number of propagation steps (>= 0)
        rng: Random generator
        initial: Initial state (zero if omitted)

    Returns:
        np.ndarray: Shape (n_steps + 1, 3), row 0 is the initial state
    """
    if n_steps < 0:
        raise InvalidArgumentError(f"n_steps must be non-negative, got {n_steps}")
    tau = require_positive("tau", tau)
    x0 = (initial or ClockState()).as_array()
    noise = sample_process_noise(spec, tau, rng, size=n_steps)

    drift = np.concatenate(([x0[2]], x0[2] + np.cumsum(noise[:, 2])))
    gamma_steps = tau * drift[:-1] + noise[:, 1]
    gamma = np.concatenate(([x0[1]], x0[1] + np.cumsum(gamma_steps)))
    theta_steps = tau * gamma[:-1] + (tau * tau / 2.0) * drift[:-1] + noise[:, 0]
    theta = np.concatenate(([x0[0]], x0[0] + np.cumsum(theta_steps)))

    return np.column_stack((theta, gamma, drift))


def flicker_frequency_noise(n: int, tau0: float, floor: float,
                            rng: np.random.Generator) -> np.ndarray:
    """
    Synthesize flicker FM fractional frequency samples.

    White noise is shaped in the frequency domain to a one-sided spectrum
    h/f, with h chosen so the Allan deviation floor equals `floor`.

    Args:
        n: Number of samples
        tau0: Sample interval in seconds
        floor: Allan deviation floor (dimensionless)
        rng: Random generator

    Returns:
        np.ndarray: n fractional frequency samples
    """
    tau0 = require_positive("tau0", tau0)
    floor = require_non_negative("floor", floor)
    if n <= 0:
        return np.zeros(0)
    if floor == 0.0:
        return np.zeros(n)

    h_flicker = floor ** 2 / (2.0 * np.log(2.0))
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=tau0)
    gain = np.zeros_like(freqs)
    gain[1:] = np.sqrt(h_flicker / (2.0 * tau0 * freqs[1:]))
    return np.fft.irfft(spectrum * gain, n)
