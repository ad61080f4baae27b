"""
Test script for stability analysis.
Checks Hadamard/Allan estimators and the noise-density fit.
"""
import sys
from pathlib import Path

import numpy as np

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from modules.clock_model import NoiseSpec, flicker_frequency_noise, simulate_clock
from modules.stability import (FrequencySeries, StabilityPoint, allan_variance, characterize_phase,
                               fit_noise_coefficients, hadamard_variance, octave_factors,
                               phase_to_frequency, stability_curve)
from utils.errors import InvalidArgumentError


def _model_points(q, taus, num_terms=100):
    q1, q2, q3 = q
    return [StabilityPoint(t, q1 / t + q2 * t / 6 + 11 / 120 * q3 * t ** 3, num_terms)
            for t in taus]


def test_phase_to_frequency():
    """Test phase differencing."""
    print("=" * 60)
    print("Testing Phase to Frequency")
    print("=" * 60)

    assert np.allclose(phase_to_frequency([0, 1e-9, 2e-9], 1.0).values, [1e-9, 1e-9],
                       rtol=1e-12, atol=0)
    assert np.array_equal(phase_to_frequency([5e-9] * 4, 1.0).values, np.zeros(3))
    assert np.allclose(phase_to_frequency([0, 0, 1e-9], 0.5).values, [0, 2e-9], rtol=1e-12, atol=0)
    print("✅ Differencing examples")

    try:
        phase_to_frequency([1e-9], 1.0)
        assert False, "single sample should be rejected"
    except InvalidArgumentError:
        pass
    print("✅ Too-short input rejected")


def test_variance_estimators():
    """Test closed-form cases of the two estimators."""
    print("\n" + "=" * 60)
    print("Testing Variance Estimators")
    print("=" * 60)

    constant = FrequencySeries(np.full(30, 3e-10), 1.0)
    # allantools integrates to phase first, so only rounding is left
    assert hadamard_variance(constant, 1).variance < 1e-40
    assert allan_variance(constant, 1).variance < 1e-40
    print("✅ Constant frequency has zero variance")

    a = 2e-10
    alternating = FrequencySeries(a * (-1.0) ** np.arange(100), 1.0)
    assert np.isclose(allan_variance(alternating, 1).variance, 2 * a * a, rtol=1e-12, atol=0)
    assert np.isclose(hadamard_variance(alternating, 1).variance, 16 * a * a / 6, rtol=1e-12, atol=0)
    print("✅ Alternating sequence closed forms")

    point = hadamard_variance(FrequencySeries(np.arange(40, dtype=float), 2.0), 4)
    assert point.tau == 8.0 and point.num_terms == 8
    assert point.hadamard_var < 1e-20
    print("✅ Linear frequency drift is rejected by the Hadamard variance")

    try:
        hadamard_variance(FrequencySeries(np.zeros(11), 1.0), 4)
        assert False, "needs 12 samples at m=4"
    except InvalidArgumentError as e:
        assert "12" in str(e)
    print("✅ Insufficient data reports the required length")

    rng = np.random.default_rng(4)
    noise = 1e-9 * rng.standard_normal(10_000)
    drifted = noise + 1e-14 * np.arange(noise.size)
    for m in (1, 4, 32):
        base = hadamard_variance(FrequencySeries(noise, 1.0), m).variance
        shifted = hadamard_variance(FrequencySeries(drifted, 1.0), m).variance
        assert abs(shifted - base) <= 1e-12 * base
        scaled = hadamard_variance(FrequencySeries(3.0 * noise, 1.0), m).variance
        assert np.isclose(scaled, 9.0 * base, rtol=1e-12, atol=0)
    print("✅ Drift insensitivity and scale equivariance")


def test_block_average_definition():
    """allantools estimates agree with the block-average definitions at any tau0."""
    print("\n" + "=" * 60)
    print("Testing Block-Average Definitions")
    print("=" * 60)

    rng = np.random.default_rng(11)
    y = 1e-10 * rng.standard_normal(1_000)
    for tau0 in (1.0, 0.1, 30.0):
        series = FrequencySeries(y, tau0)
        for m in (1, 3, 7, 50):
            blocks = y[:(y.size // m) * m].reshape(-1, m).mean(axis=1)
            second = np.diff(blocks, n=2)
            first = np.diff(blocks)
            hadamard = hadamard_variance(series, m)
            allan = allan_variance(series, m)
            assert hadamard.num_terms == second.size and allan.num_terms == first.size
            assert np.isclose(hadamard.variance, np.mean(second ** 2) / 6, rtol=1e-9, atol=0)
            assert np.isclose(allan.variance, np.mean(first ** 2) / 2, rtol=1e-9, atol=0)
            assert np.isclose(hadamard.tau, m * tau0, rtol=1e-15, atol=0)
    print("✅ Variances and term counts match for tau0 of 1, 0.1 and 30 s")


def test_white_fm_hadamard():
    """Monte-Carlo: white FM follows q1/tau."""
    print("\n" + "=" * 60)
    print("Testing White-FM Hadamard Variance")
    print("=" * 60)

    q1 = 1e-22
    rng = np.random.default_rng(2024)
    series = FrequencySeries(np.sqrt(q1) * rng.standard_normal(100_000), 1.0)
    for point in stability_curve(series, factors=[1, 2, 4, 8, 16]):
        expected = q1 / point.tau
        assert abs(point.variance / expected - 1.0) < 0.2, (point.tau, point.variance, expected)
        print(f"   tau={point.tau:4.0f}s  ratio={point.variance / expected:.3f}")
    print("✅ Within 20% across five octaves")

    assert octave_factors(100_000)[-1] == 8192
    assert octave_factors(25) == [1, 2]
    print("✅ Octave grid stops at a tenth of the span")


def test_noise_fit_exact():
    """Exact model inversion."""
    print("\n" + "=" * 60)
    print("Testing Noise Fit (exact data)")
    print("=" * 60)

    taus = [2.0 ** k for k in range(11)]
    fit = fit_noise_coefficients(_model_points((1e-22, 0.0, 0.0), taus))
    assert abs(fit.spec.q_theta / 1e-22 - 1.0) < 1e-10
    assert fit.spec.q_gamma <= 1e-10 * 1e-22 / taus[-1] ** 2
    assert fit.spec.q_drift <= 1e-10 * 1e-22 / taus[-1] ** 4
    assert fit.residual < 1e-8
    print("✅ Single white-FM term recovered")

    q = (1e-22, 1e-26, 1e-32)
    fit = fit_noise_coefficients(_model_points(q, taus))
    recovered = fit.spec.as_array()
    assert np.all(np.abs(recovered / np.array(q) - 1.0) < 1e-6), recovered
    print("✅ All three densities recovered")

    try:
        fit_noise_coefficients(_model_points(q, [10.0, 10.0, 10.0]))
        assert False, "equal taus should be rejected"
    except InvalidArgumentError:
        pass
    try:
        fit_noise_coefficients(_model_points(q, [1.0, 2.0]))
        assert False, "two points should be rejected"
    except InvalidArgumentError:
        pass
    print("✅ Degenerate inputs rejected")

    rng = np.random.default_rng(8)
    noisy = [StabilityPoint(p.tau, p.variance * rng.uniform(0.2, 3.0), p.num_terms)
             for p in _model_points(q, taus)]
    assert np.all(fit_noise_coefficients(noisy).spec.as_array() >= 0.0)
    print("✅ Noisy input still yields non-negative densities")


def test_noise_fit_round_trip():
    """Simulate, estimate and fit: median over runs within 30%."""
    print("\n" + "=" * 60)
    print("Testing Noise Fit Round Trip")
    print("=" * 60)

    spec = NoiseSpec(1e-22, 1e-26, 0.0)
    fitted = []
    for seed in range(20):
        phase = simulate_clock(spec, 1.0, 100_000, np.random.default_rng(seed))[:, 0]
        result = characterize_phase(phase, 1.0)
        fitted.append(result.fit.spec.as_array())
    median = np.median(np.array(fitted), axis=0)
    for index, name in ((0, "q_theta"), (1, "q_gamma")):
        truth = spec.as_array()[index]
        ratio = median[index] / truth
        print(f"   {name}: median ratio {ratio:.3f}")
        assert abs(ratio - 1.0) < 0.3
    print("✅ Nonzero densities within 30%")


def test_ocxo_allan_floor():
    """Simulated OCXO with a flicker floor stays within 2x of 5e-10."""
    print("\n" + "=" * 60)
    print("Testing OCXO Allan Deviation")
    print("=" * 60)

    rng = np.random.default_rng(77)
    n = 100_000
    white = np.sqrt(9e-20) * rng.standard_normal(n)
    y = white + flicker_frequency_noise(n, 1.0, 4.5e-10, rng)
    series = FrequencySeries(y, 1.0)
    for m in (1, 10, 100, 1000):
        deviation = allan_variance(series, m).deviation
        print(f"   tau={m:5d}s  sigma_A={deviation:.3e}")
        assert 2.5e-10 <= deviation <= 1e-9
    print("✅ Allan deviation within a factor of 2 of 5e-10")


if __name__ == "__main__":
    print("\n🧪 Starting Stability Tests\n")
    test_phase_to_frequency()
    test_variance_estimators()
    test_block_average_definition()
    test_white_fm_hadamard()
    test_noise_fit_exact()
    test_noise_fit_round_trip()
    test_ocxo_allan_floor()
    print("\n" + "=" * 60)
    print("✅ ALL STABILITY TESTS PASSED!")
    print("=" * 60)
