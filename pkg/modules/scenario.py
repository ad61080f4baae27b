"""
Scenario Module - Ensemble scenarios, attack profiles and trace generation.

A scenario is a GNSS-disciplined clock plus one or more free-running local
oscillators, observed at a fixed cadence, with an optional time attack added
to the GNSS clock. Simulation is deterministic given the seed and the attack
enters additively, so a run with an attack differs from the benign run with
the same seed by exactly the attack offset.
"""
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy import signal

from config.config import Config
from modules.clock_model import ClockState, NoiseSpec, flicker_frequency_noise, simulate_clock
from modules.detector import CalibrationResult
from utils.errors import ConfigError, InvalidArgumentError
from utils.logger import setup_logger
from utils.validators import require_finite, require_finite_array, require_non_negative, require_positive

logger = setup_logger(__name__)


class AttackKind(str, Enum):
    NONE = "none"
    RAMP = "ramp"
    STEP = "step"
    FREQ_IMPULSE = "freq_impulse"


@dataclass(frozen=True)
class AttackProfile:
    """
    Time offset injected into the GNSS clock.

    ramp pulls the clock towards target_offset at pull_rate; step jumps to
    target_offset at start; freq_impulse applies a rectangular frequency
    pulse of impulse_amplitude for impulse_duration seconds.
    """

    kind: AttackKind = AttackKind.NONE
    start: float = 0.0
    target_offset: float = 0.0
    pull_rate: float = 0.0
    impulse_amplitude: float = 0.0
    impulse_duration: float = 0.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", AttackKind(self.kind))
        except ValueError:
            raise InvalidArgumentError(
                f"Unknown attack kind {self.kind!r}; expected one of "
                f"{[k.value for k in AttackKind]}"
            )
        object.__setattr__(self, "start", require_non_negative("attack.start", self.start))
        for name in ("target_offset", "pull_rate", "impulse_amplitude", "impulse_duration"):
            object.__setattr__(self, name, require_finite(f"attack.{name}", getattr(self, name)))

        if self.kind == AttackKind.RAMP:
            if self.pull_rate <= 0:
                raise InvalidArgumentError("ramp attack requires pull_rate > 0")
            if self.target_offset == 0:
                raise InvalidArgumentError("ramp attack requires target_offset != 0")
        elif self.kind == AttackKind.STEP:
            if self.target_offset == 0:
                raise InvalidArgumentError("step attack requires target_offset != 0")
        elif self.kind == AttackKind.FREQ_IMPULSE:
            if self.impulse_amplitude == 0:
                raise InvalidArgumentError("freq_impulse attack requires impulse_amplitude != 0")
            if self.impulse_duration <= 0:
                raise InvalidArgumentError("freq_impulse attack requires impulse_duration > 0")

    @property
    def is_attack(self) -> bool:
        return self.kind != AttackKind.NONE

    @property
    def attack_start(self) -> Optional[float]:
        """Start epoch, or None for a benign profile."""
        return self.start if self.is_attack else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "start": self.start,
            "target_offset": self.target_offset,
            "pull_rate": self.pull_rate,
            "impulse_amplitude": self.impulse_amplitude,
            "impulse_duration": self.impulse_duration,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttackProfile":
        _reject_unknown("attack", data, cls.__dataclass_fields__)
        return cls(**data)


def attack_offset(profile: AttackProfile, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Offset a(t) injected into the GNSS clock.

    Args:
        profile: Attack profile
        t: Time in seconds (scalar or array, >= 0)

    Returns:
        Offset in seconds, same shape as t
    """
    times = np.asarray(t, dtype=float)
    elapsed = times - profile.start

    if profile.kind == AttackKind.NONE:
        offset = np.zeros_like(times)
    elif profile.kind == AttackKind.STEP:
        offset = np.where(elapsed >= 0.0, profile.target_offset, 0.0)
    elif profile.kind == AttackKind.RAMP:
        magnitude = np.minimum(profile.pull_rate * np.maximum(elapsed, 0.0),
                               abs(profile.target_offset))
        offset = np.sign(profile.target_offset) * magnitude
    else:
        offset = profile.impulse_amplitude * np.clip(elapsed, 0.0, profile.impulse_duration)

    if np.ndim(t) == 0:
        return float(offset)
    return offset


@dataclass(frozen=True)
class GnssClockModel:
    """
    GNSS-disciplined clock: ideal time plus white discipline error.

    random_walk_sigma adds a steered wander (stationary std, reverting at
    steering_gain); it is off by default.
    """

    benign_phase_sigma: float = 3e-8
    steering_gain: float = 0.06
    random_walk_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "benign_phase_sigma",
                           require_non_negative("gnss.benign_phase_sigma", self.benign_phase_sigma))
        object.__setattr__(self, "steering_gain",
                           require_positive("gnss.steering_gain", self.steering_gain))
        object.__setattr__(self, "random_walk_sigma",
                           require_non_negative("gnss.random_walk_sigma", self.random_walk_sigma))

    def filter_spec(self, tau: float) -> NoiseSpec:
        """
        Noise densities the filter assumes for the GNSS clock.

        The phase density covers the per-epoch discipline error; the
        frequency density is the steering gain squared times the phase
        density, so the steering gain sets the frequency-tracking bandwidth.
        """
        tau = require_positive("tau", tau)
        q_theta = (self.benign_phase_sigma ** 2 / tau
                   + 2.0 * self.steering_gain * self.random_walk_sigma ** 2)
        return NoiseSpec(q_theta=q_theta, q_gamma=self.steering_gain ** 2 * q_theta, q_drift=0.0)

    def to_dict(self) -> Dict[str, float]:
        return {
            "benign_phase_sigma": self.benign_phase_sigma,
            "steering_gain": self.steering_gain,
            "random_walk_sigma": self.random_walk_sigma,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GnssClockModel":
        _reject_unknown("gnss", data, cls.__dataclass_fields__)
        return cls(**data)


@dataclass(frozen=True)
class LocalClock:
    """A free-running local oscillator."""

    noise: NoiseSpec = field(default_factory=NoiseSpec)
    flicker_floor: float = 0.0
    initial: ClockState = field(default_factory=ClockState)

    def __post_init__(self):
        object.__setattr__(self, "flicker_floor",
                           require_non_negative("flicker_floor", self.flicker_floor))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "noise": self.noise.to_dict(),
            "flicker_floor": self.flicker_floor,
            "initial": {"theta": self.initial.theta, "gamma": self.initial.gamma,
                        "drift": self.initial.drift},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LocalClock":
        # Plain NoiseSpec objects are accepted as shorthand
        if set(data) <= {"q_theta", "q_gamma", "q_drift"}:
            return cls(noise=NoiseSpec.from_dict(data))
        _reject_unknown("local clock", data, cls.__dataclass_fields__)
        return cls(
            noise=NoiseSpec.from_dict(data.get("noise", {})),
            flicker_floor=data.get("flicker_floor", 0.0),
            initial=ClockState.from_dict(data.get("initial", {})),
        )


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one simulated run."""

    duration: float
    local_clocks: Tuple[LocalClock, ...]
    tau: float = Config.DEFAULT_TAU
    gnss: GnssClockModel = field(default_factory=GnssClockModel)
    attack: AttackProfile = field(default_factory=AttackProfile)
    quantization: float = Config.DEFAULT_QUANTIZATION
    seed: int = 0
    name: str = "scenario"
    reference_calibration: Optional[CalibrationResult] = None

    def __post_init__(self):
        object.__setattr__(self, "tau", require_positive("tau", self.tau))
        object.__setattr__(self, "duration", require_finite("duration", self.duration))
        object.__setattr__(self, "quantization",
                           require_non_negative("quantization", self.quantization))
        if self.duration < 10.0 * self.tau:
            raise InvalidArgumentError(
                f"duration must be at least 10 * tau ({10.0 * self.tau:g} s), got {self.duration:g} s"
            )
        clocks = tuple(self.local_clocks)
        if len(clocks) < 1:
            raise InvalidArgumentError("Scenario needs at least one local clock")
        object.__setattr__(self, "local_clocks", clocks)
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or self.seed < 0:
            raise InvalidArgumentError(f"seed must be a non-negative integer, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def num_clocks(self) -> int:
        """Ensemble size including the GNSS clock."""
        return len(self.local_clocks) + 1

    @property
    def num_epochs(self) -> int:
        return int(round(self.duration / self.tau)) + 1

    def with_overrides(self, **changes: Any) -> "ScenarioConfig":
        data = {name: getattr(self, name) for name in self.__dataclass_fields__}
        data.update(changes)
        return ScenarioConfig(**data)

    def benign_twin(self) -> "ScenarioConfig":
        """Same scenario without the attack and with an offset seed."""
        return self.with_overrides(
            attack=AttackProfile(),
            seed=self.seed + Config.CALIBRATION_SEED_OFFSET,
            name=f"{self.name}-benign",
        )

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "name": self.name,
            "duration": self.duration,
            "tau": self.tau,
            "quantization": self.quantization,
            "seed": self.seed,
            "gnss": self.gnss.to_dict(),
            "local_clocks": [clock.to_dict() for clock in self.local_clocks],
            "attack": self.attack.to_dict(),
        }
        if self.reference_calibration is not None:
            data["reference_calibration"] = self.reference_calibration.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScenarioConfig":
        """
        Build a config from parsed JSON, rejecting unknown keys.

        Raises:
            ConfigError: On unknown keys or invalid values
        """
        if not isinstance(data, dict):
            raise ConfigError("Scenario config must be a JSON object")
        try:
            _reject_unknown("scenario", data, cls.__dataclass_fields__)
            if "duration" not in data or "local_clocks" not in data:
                raise ConfigError("Scenario config requires 'duration' and 'local_clocks'")
            if not isinstance(data["local_clocks"], list):
                raise ConfigError("'local_clocks' must be a list")
            calibration = data.get("reference_calibration")
            return cls(
                duration=data["duration"],
                local_clocks=tuple(LocalClock.from_dict(c) for c in data["local_clocks"]),
                tau=data.get("tau", Config.DEFAULT_TAU),
                gnss=GnssClockModel.from_dict(data.get("gnss", {})),
                attack=AttackProfile.from_dict(data.get("attack", {})),
                quantization=data.get("quantization", Config.DEFAULT_QUANTIZATION),
                seed=data.get("seed", 0),
                name=str(data.get("name", "scenario")),
                reference_calibration=(CalibrationResult.from_dict(calibration)
                                       if calibration is not None else None),
            )
        except ConfigError:
            raise
        except (ValueError, TypeError, AttributeError) as e:
            raise ConfigError(f"Invalid scenario config: {e}") from e


def _reject_unknown(section: str, data: Dict[str, Any], allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"'{section}' must be a JSON object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"Unknown key(s) in {section}: {', '.join(unknown)}")


def config_hash(config: ScenarioConfig) -> str:
    """SHA-256 of the canonical JSON form of a config."""
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TraceSet:
    """
    Per-epoch phases of every clock against ideal time.

    local_phases has one row per local clock.
    """

    epochs: np.ndarray = field(repr=False)
    gnss_phase: np.ndarray = field(repr=False)
    local_phases: np.ndarray = field(repr=False)
    attack_truth: np.ndarray = field(repr=False)

    def __post_init__(self):
        epochs = require_finite_array("epochs", self.epochs)
        gnss = require_finite_array("gnss_phase", self.gnss_phase)
        local = require_finite_array("local_phases", np.atleast_2d(self.local_phases), ndim=2)
        truth = require_finite_array("attack_truth", self.attack_truth)
        n = epochs.size
        if gnss.size != n or truth.size != n or local.shape[1] != n:
            raise InvalidArgumentError(
                f"Trace series lengths differ: epochs={n}, gnss={gnss.size}, "
                f"local={local.shape[1]}, attack_truth={truth.size}"
            )
        if local.shape[0] < 1:
            raise InvalidArgumentError("Trace needs at least one local clock")
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "gnss_phase", gnss)
        object.__setattr__(self, "local_phases", local)
        object.__setattr__(self, "attack_truth", truth)

    def __len__(self) -> int:
        return int(self.epochs.size)

    @property
    def num_local_clocks(self) -> int:
        return int(self.local_phases.shape[0])

    @property
    def num_clocks(self) -> int:
        return self.num_local_clocks + 1

    @property
    def tau(self) -> float:
        """Median epoch spacing."""
        if len(self) < 2:
            return Config.DEFAULT_TAU
        return float(np.median(np.diff(self.epochs)))


@dataclass(frozen=True)
class MeasurementLog:
    """
    Recorded phase differences, one row per epoch.

    z[k, i] is GNSS minus local clock i+1 at epochs[k]; NaN marks a missing
    measurement.
    """

    epochs: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    attack_truth: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        epochs = require_finite_array("epochs", self.epochs)
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 2 or z.shape[0] != epochs.size:
            raise InvalidArgumentError(
                f"Measurement matrix shape {z.shape} does not match {epochs.size} epochs"
            )
        if np.any(np.isinf(z)):
            raise InvalidArgumentError("Measurements contain infinite values")
        truth = self.attack_truth
        if truth is None:
            truth = np.zeros(epochs.size)
        truth = require_finite_array("attack_truth", truth)
        if truth.size != epochs.size:
            raise InvalidArgumentError("attack_truth length does not match epochs")
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "attack_truth", truth)

    def __len__(self) -> int:
        return int(self.epochs.size)

    @property
    def num_clocks(self) -> int:
        return int(self.z.shape[1]) + 1


def simulate(config: ScenarioConfig) -> TraceSet:
    """
    Generate truth phases for every clock.

    Random draws happen in a fixed order (local clocks, then GNSS discipline
    error, then GNSS wander) and never depend on the attack, so identical
    configs give identical traces and attacks superpose exactly.

    Args:
        config: Scenario configuration

    Returns:
        TraceSet: Per-epoch phases and attack truth
    """
    rng = np.random.default_rng(config.seed)
    n = config.num_epochs
    tau = config.tau
    epochs = np.arange(n, dtype=float) * tau

    local_phases = np.empty((len(config.local_clocks), n))
    for i, clock in enumerate(config.local_clocks):
        states = simulate_clock(clock.noise, tau, n - 1, rng, clock.initial)
        phase = states[:, 0]
        if clock.flicker_floor > 0.0:
            y = flicker_frequency_noise(n, tau, clock.flicker_floor, rng)
            phase = phase + tau * np.concatenate(([0.0], np.cumsum(y[:-1])))
        local_phases[i] = phase

    gnss = config.gnss
    gnss_phase = gnss.benign_phase_sigma * rng.standard_normal(n)
    if gnss.random_walk_sigma > 0.0:
        gnss_phase = gnss_phase + _steered_wander(gnss, tau, n, rng)

    truth = attack_offset(config.attack, epochs)
    gnss_phase = gnss_phase + truth

    logger.info(
        f"Simulated '{config.name}' seed={config.seed}: {n} epochs, "
        f"{len(config.local_clocks)} local clocks, attack={config.attack.kind.value}"
    )
    return TraceSet(epochs, gnss_phase, local_phases, truth)


def _steered_wander(gnss: GnssClockModel, tau: float, n: int,
                    rng: np.random.Generator) -> np.ndarray:
    # Exact discretization of a mean-reverting random walk, started stationary
    decay = np.exp(-gnss.steering_gain * tau)
    drive = rng.standard_normal(n)
    drive[0] *= gnss.random_walk_sigma
    drive[1:] *= gnss.random_walk_sigma * np.sqrt(1.0 - decay ** 2)
    return signal.lfilter([1.0], [1.0, -decay], drive)


def measure(traces: TraceSet, quantization: float) -> np.ndarray:
    """
    Phase-difference measurements GNSS minus each local clock.

    Args:
        traces: Truth traces
        quantization: Phase-detector resolution in seconds (0 = exact)

    Returns:
        np.ndarray: Shape (epochs, N-1), one measurement vector per row
    """
    quantization = require_non_negative("quantization", quantization)
    differences = (traces.gnss_phase[None, :] - traces.local_phases).T
    if quantization == 0.0:
        return differences
    return quantization * np.round(differences / quantization)


def measurement_log(traces: TraceSet, quantization: float) -> MeasurementLog:
    """Wrap measure() output with epochs and attack truth."""
    return MeasurementLog(traces.epochs, measure(traces, quantization), traces.attack_truth)
