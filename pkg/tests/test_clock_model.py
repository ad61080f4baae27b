"""
Test script for the clock model.
Checks the exact discretization, noise sampling and propagation.
"""
import sys
from pathlib import Path

import numpy as np

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from modules.clock_model import (ClockState, NoiseSpec, deterministic_phase, process_noise_block,
                                 propagate_state, sample_process_noise, simulate_clock,
                                 transition_block)
from utils.errors import InvalidArgumentError
from utils.validators import is_symmetric_psd


def test_transition_block():
    """Test transition block values and the semigroup identity."""
    print("=" * 60)
    print("Testing Transition Block")
    print("=" * 60)

    assert np.array_equal(transition_block(1.0), [[1, 1, 0.5], [0, 1, 1], [0, 0, 1]])
    assert np.array_equal(transition_block(2.0), [[1, 2, 2], [0, 1, 2], [0, 0, 1]])
    half = transition_block(0.5)
    assert np.allclose(half @ half, transition_block(1.0), rtol=1e-12, atol=0)
    print("✅ Values and semigroup identity")

    for tau1, tau2 in [(0.3, 1.7), (10.0, 25.0), (1e-3, 1e3)]:
        product = transition_block(tau1) @ transition_block(tau2)
        assert np.allclose(product, transition_block(tau1 + tau2), rtol=1e-12, atol=0)
    print("✅ Semigroup over mixed step lengths")

    for bad in (0.0, -1.0, float("nan"), float("inf")):
        try:
            transition_block(bad)
            assert False, f"tau={bad} should be rejected"
        except InvalidArgumentError:
            pass
    print("✅ Invalid step lengths rejected")


def test_process_noise_block():
    """Test the integrated process-noise covariance."""
    print("\n" + "=" * 60)
    print("Testing Process-Noise Block")
    print("=" * 60)

    assert np.array_equal(process_noise_block(NoiseSpec(), 3.0), np.zeros((3, 3)))
    single = process_noise_block(NoiseSpec(q_theta=1.0), 1.0)
    expected = np.zeros((3, 3))
    expected[0, 0] = 1.0
    assert np.array_equal(single, expected)
    print("✅ Zero and phase-only specs")

    q = process_noise_block(NoiseSpec(1e-22, 1e-26, 0.0), 1.0)
    assert np.isclose(q[0, 0], 1e-22 + 1e-26 / 3, rtol=1e-14, atol=0)
    assert np.isclose(q[0, 1], 5e-27, rtol=1e-14, atol=0)
    assert np.isclose(q[1, 1], 1e-26, rtol=1e-14, atol=0)
    assert q[0, 2] == 0.0 and q[2, 2] == 0.0
    print("✅ Direct substitution values")

    rng = np.random.default_rng(3)
    for _ in range(50):
        spec = NoiseSpec(*(10.0 ** rng.uniform(-30, -18, size=3)))
        tau = 10.0 ** rng.uniform(-1, 3)
        block = process_noise_block(spec, tau)
        assert is_symmetric_psd(block)
        scaled = process_noise_block(NoiseSpec(*(4.0 * spec.as_array())), tau)
        assert np.allclose(scaled, 4.0 * block, rtol=1e-12, atol=0)
    print("✅ PSD and scaling over random specs")

    # Integrated noise over tau1 + tau2 equals noise over tau1 carried forward plus noise over tau2
    spec = NoiseSpec(2.0, 0.5, 0.1)
    phi = transition_block(2.0)
    combined = phi @ process_noise_block(spec, 1.0) @ phi.T + process_noise_block(spec, 2.0)
    assert np.allclose(combined, process_noise_block(spec, 3.0), rtol=1e-12)
    print("✅ Noise block composes across steps")


def test_sample_process_noise():
    """Test noise sampling."""
    print("\n" + "=" * 60)
    print("Testing Noise Sampling")
    print("=" * 60)

    rng = np.random.default_rng(11)
    assert np.array_equal(sample_process_noise(NoiseSpec(), 1.0, rng), np.zeros(3))
    draw = sample_process_noise(NoiseSpec(q_theta=1.0), 1.0, rng)
    assert draw[1] == 0.0 and draw[2] == 0.0 and draw[0] != 0.0
    print("✅ Degenerate specs excite only their components")

    a = sample_process_noise(NoiseSpec(1e-2, 1e-3, 1e-4), 1.0, np.random.default_rng(5))
    b = sample_process_noise(NoiseSpec(1e-2, 1e-3, 1e-4), 1.0, np.random.default_rng(5))
    assert np.array_equal(a, b)
    print("✅ Deterministic given the seed")

    spec = NoiseSpec(1e-2, 1e-3, 1e-4)
    draws = sample_process_noise(spec, 1.0, rng, size=100_000)
    empirical = np.cov(draws, rowvar=False)
    expected = process_noise_block(spec, 1.0)
    relative = np.abs(np.diag(empirical) - np.diag(expected)) / np.diag(expected)
    assert np.all(relative < 0.05), relative
    print(f"✅ Monte-Carlo diagonal within 5% (max {relative.max():.3%})")


def test_propagate_state():
    """Test deterministic and noisy propagation."""
    print("\n" + "=" * 60)
    print("Testing State Propagation")
    print("=" * 60)

    state = propagate_state(ClockState(0.0, 1e-9, 0.0), 10.0)
    assert np.isclose(state.theta, 1e-8, rtol=1e-15, atol=0) and state.gamma == 1e-9
    state = propagate_state(ClockState(0.0, 0.0, 2e-12), 10.0)
    assert np.allclose(state.as_array(), [1e-10, 2e-11, 2e-12], rtol=1e-15, atol=0)
    print("✅ Frequency and drift integrate as expected")

    start = ClockState(1e-6, -3e-10, 4e-14)
    there = propagate_state(start, 7.0)
    inverse = np.linalg.inv(transition_block(7.0))
    back = ClockState.from_array(inverse @ there.as_array())
    assert np.allclose(back.as_array(), start.as_array(), rtol=1e-12, atol=1e-24)
    print("✅ Propagation is invertible up to round-off")

    theta0, gamma, drift = 1e-6, 2e-10, 3e-14
    state = ClockState(theta0, gamma, drift)
    for _ in range(100):
        state = propagate_state(state, 1.0)
    closed = deterministic_phase(theta0, gamma, drift, 100.0)
    assert np.isclose(state.theta, closed, rtol=1e-13, atol=0)
    print("✅ Zero-noise steps match the closed form")

    assert deterministic_phase(0, 0, 0, 55.0) == 0.0
    assert deterministic_phase(1e-6, 0, 0, 100.0) == 1e-6
    assert np.isclose(deterministic_phase(0, 1e-9, 1e-14, 100.0), 1e-7 + 5e-11, rtol=1e-15, atol=0)
    print("✅ Closed-form phase examples")

    try:
        ClockState(float("nan"), 0.0, 0.0)
        assert False, "NaN state should be rejected"
    except InvalidArgumentError:
        pass
    try:
        NoiseSpec(q_theta=-1.0)
        assert False, "negative density should be rejected"
    except InvalidArgumentError:
        pass
    print("✅ Invalid states and specs rejected")


def test_simulate_clock():
    """Test vectorized simulation against repeated propagation."""
    print("\n" + "=" * 60)
    print("Testing Clock Simulation")
    print("=" * 60)

    spec = NoiseSpec(1e-2, 1e-3, 1e-4)
    initial = ClockState(0.5, -0.1, 0.01)
    trajectory = simulate_clock(spec, 1.0, 50, np.random.default_rng(9), initial)

    noise = sample_process_noise(spec, 1.0, np.random.default_rng(9), size=50)
    state = initial
    manual = [state.as_array()]
    for k in range(50):
        state = propagate_state(state, 1.0, noise[k])
        manual.append(state.as_array())
    assert np.allclose(trajectory, np.array(manual), rtol=1e-10, atol=1e-12)
    print("✅ Cumulative-sum simulation equals repeated propagation")

    # Propagated cloud statistics match Phi P Phi^T + Q
    rng = np.random.default_rng(21)
    p0 = np.diag([1.0, 0.5, 0.2])
    starts = rng.standard_normal((100_000, 3)) @ np.sqrt(p0)
    phi = transition_block(2.0)
    cloud = starts @ phi.T + sample_process_noise(spec, 2.0, rng, size=100_000)
    expected = phi @ p0 @ phi.T + process_noise_block(spec, 2.0)
    relative = np.abs(np.diag(np.cov(cloud, rowvar=False)) - np.diag(expected)) / np.diag(expected)
    assert np.all(relative < 0.05), relative
    print("✅ Propagated cloud matches predicted covariance")

    ideal = simulate_clock(NoiseSpec(), 1.0, 100, np.random.default_rng(0))
    assert np.array_equal(ideal, np.zeros((101, 3)))
    print("✅ Ideal clock stays at zero")


if __name__ == "__main__":
    print("\n🧪 Starting Clock Model Tests\n")
    test_transition_block()
    test_process_noise_block()
    test_sample_process_noise()
    test_propagate_state()
    test_simulate_clock()
    print("\n" + "=" * 60)
    print("✅ ALL CLOCK MODEL TESTS PASSED!")
    print("=" * 60)
