"""
Test script for the ensemble Kalman filter.
Checks construction, predict/update, the rebase and filter consistency.
"""
import sys
from pathlib import Path

import numpy as np
from scipy.stats import chi2

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config.config import Config
from modules.clock_model import NoiseSpec, process_noise_block
from modules.ensemble_filter import (EnsembleFilter, FilterModel, FilterState, build_filter,
                                     gnss_differential_estimate, measurement_matrix, predict,
                                     rebase_covariance, relativization_matrix, update)
from modules.ensemble_runner import filter_model_for, run_filter
from modules.scenario import MeasurementLog, measurement_log, simulate
from modules.trace_store import load_scenario_config
from utils.errors import InvalidArgumentError, NumericalError
from utils.validators import is_symmetric_psd


def test_build_filter():
    """Test filter construction."""
    print("=" * 60)
    print("Testing Filter Construction")
    print("=" * 60)

    model = FilterModel((NoiseSpec(), NoiseSpec()), 1.0, 1e-20)
    state = build_filter(model)
    assert state.x_hat.shape == (6,) and np.array_equal(state.p, np.eye(6)) and state.epoch == 0.0
    assert np.array_equal(model.measurement_matrix(), [[1, 0, 0, -1, 0, 0]])
    print("✅ N=2 gives a 6-state filter")

    model4 = FilterModel(tuple(NoiseSpec(1e-20) for _ in range(4)), 1.0, 1e-20)
    h = model4.measurement_matrix()
    assert h.shape == (3, 12)
    common_phase = np.zeros(12)
    common_phase[0::3] = 1.0
    assert np.array_equal(h @ common_phase, np.zeros(3))
    print("✅ N=4 gives 3 measurement rows; common phase is unobservable")

    assert gnss_differential_estimate(build_filter(model4)) == (0.0, 0.0, 1.0, 1.0)
    print("✅ Fresh filter estimate is (0, 0, 1, 1)")

    for bad in (lambda: FilterModel((NoiseSpec(),), 1.0, 0.0),
                lambda: FilterModel((NoiseSpec(), NoiseSpec()), 0.0, 0.0),
                lambda: FilterModel((NoiseSpec(), NoiseSpec()), 1.0, -1.0)):
        try:
            bad()
            assert False, "invalid model accepted"
        except InvalidArgumentError:
            pass
    print("✅ Invalid models rejected")


def test_predict():
    """Test the time update."""
    print("\n" + "=" * 60)
    print("Testing Predict")
    print("=" * 60)

    model = FilterModel((NoiseSpec(), NoiseSpec()), 1.0, 0.0)
    predicted = predict(build_filter(model), model)
    phi = model.transition_matrix()
    assert np.array_equal(predicted.x_hat, np.zeros(6))
    assert np.allclose(predicted.p, phi @ phi.T, rtol=1e-15, atol=0)
    assert predicted.epoch == 1.0
    print("✅ Zero state with zero noise")

    state = FilterState(np.array([0, 1e-9, 0, 0, 0, 0], dtype=float), np.eye(6), 0.0)
    model2 = FilterModel((NoiseSpec(), NoiseSpec()), 2.0, 0.0)
    assert np.isclose(predict(state, model2).x_hat[0], 2e-9, rtol=1e-15, atol=0)
    print("✅ Frequency integrates into phase")

    noisy = FilterModel((NoiseSpec(1e-3, 1e-5), NoiseSpec(1e-4)), 1.0, 0.0)
    state = build_filter(noisy)
    previous = np.trace(state.p)
    for _ in range(5):
        state = predict(state, noisy)
        assert np.trace(state.p) >= previous
        previous = np.trace(state.p)
    print("✅ Covariance trace non-decreasing under predict")


def test_update_and_rebase():
    """Test the measurement update and the rebase projection."""
    print("\n" + "=" * 60)
    print("Testing Update and Rebase")
    print("=" * 60)

    model = FilterModel(tuple(NoiseSpec(1e-3, 1e-5) for _ in range(4)), 1.0, 1e-2)
    fresh = build_filter(model)
    updated, record = update(fresh, np.zeros(3), model)
    assert np.array_equal(updated.x_hat, np.zeros(12))
    assert np.trace(updated.p) < np.trace(fresh.p)
    assert record.nis == 0.0 and is_symmetric_psd(record.innovation_cov)
    print("✅ Zero innovation keeps the estimate and shrinks the covariance")

    try:
        update(fresh, np.zeros(2), model)
        assert False, "wrong measurement size accepted"
    except InvalidArgumentError:
        pass
    print("✅ Measurement dimension checked")

    t = relativization_matrix(4)
    h = measurement_matrix(4)
    phi = model.transition_matrix()
    assert np.allclose(t @ t, t, atol=1e-15)
    assert np.allclose(h @ t, h, atol=1e-15)
    assert np.allclose(t @ phi, phi @ t, atol=1e-14)
    print("✅ Rebase is a projection that preserves measurements and commutes with propagation")

    rng = np.random.default_rng(1)
    a = rng.standard_normal((12, 12))
    state = FilterState(rng.standard_normal(12), a @ a.T, 5.0)
    rebased = rebase_covariance(state)
    differential = np.zeros(12)
    differential[[0, 1]] = 1.0
    differential[[3, 4]] = -1.0
    assert abs(differential @ rebased.x_hat - differential @ state.x_hat) < 1e-13
    assert np.isclose(differential @ rebased.p @ differential, differential @ state.p @ differential,
                      rtol=1e-13, atol=0)
    local_mean = np.zeros(12)
    local_mean[3::3] = 1.0 / 3.0
    assert abs(local_mean @ rebased.x_hat) < 1e-14
    assert is_symmetric_psd(rebased.p)
    print("✅ Differential quantities unchanged, local mean moved to zero")

    # GNSS-minus-local estimate is what the rebased clock-0 slot reports
    z = np.array([3.0, 5.0, 4.0])
    state = build_filter(FilterModel(tuple(NoiseSpec() for _ in range(4)), 1.0, 1e-20))
    state, _ = update(state, z, FilterModel(tuple(NoiseSpec() for _ in range(4)), 1.0, 1e-20))
    assert np.isclose(gnss_differential_estimate(state).theta_hat, 4.0, rtol=1e-9)
    print("✅ Clock 0 reports GNSS minus ensemble mean")


def test_deterministic_convergence():
    """Deterministic clocks converge to the constant difference."""
    print("\n" + "=" * 60)
    print("Testing Deterministic Convergence")
    print("=" * 60)

    d = 3e-7
    model = FilterModel((NoiseSpec(), NoiseSpec()), 1.0, 1e-20)
    ensemble = EnsembleFilter(model)
    for _ in range(10):
        estimate = ensemble.step([d])
    assert abs(estimate.theta_hat - d) < 1e-12
    print(f"✅ Converged to {estimate.theta_hat:.6e} within 1e-12")

    singular = FilterModel((NoiseSpec(), NoiseSpec()), 1.0, 0.0)
    zero = FilterState(np.zeros(6), np.zeros((6, 6)), 0.0)
    try:
        update(zero, [1e-9], singular)
        assert False, "singular innovation covariance accepted"
    except NumericalError as e:
        assert e.condition is not None
    print("✅ Singular innovation covariance raises with a condition estimate")


def _scalar_difference_filter(z, q_diff, r, steps):
    """Independent 2-state (phase, frequency) filter on the clock difference."""
    x = np.zeros(2)
    p = 2.0 * np.eye(2)
    f = np.array([[1.0, 1.0], [0.0, 1.0]])
    out = []
    for k in range(steps):
        if k > 0:
            x = f @ x
            p = f @ p @ f.T + q_diff
        s = p[0, 0] + r
        gain = p[:, 0] / s
        x = x + gain * (z[k] - x[0])
        p = p - np.outer(gain, p[0, :])
        out.append(x.copy())
    return np.array(out)


def test_scalar_oracle():
    """N=2 without drift matches an independent difference filter."""
    print("\n" + "=" * 60)
    print("Testing Scalar Oracle Equivalence")
    print("=" * 60)

    spec0, spec1 = NoiseSpec(1e-3, 1e-5), NoiseSpec(2e-3, 3e-5)
    r = 1e-2
    steps = 1000
    model = FilterModel((spec0, spec1), 1.0, r)

    rng = np.random.default_rng(12)
    truth = np.cumsum(rng.standard_normal(steps)) * 0.05
    z = truth + np.sqrt(r) * rng.standard_normal(steps)

    p0 = np.eye(6)
    p0[2, 2] = p0[5, 5] = 0.0
    ensemble = EnsembleFilter(model)
    ensemble.state = FilterState(np.zeros(6), p0, 0.0)
    full = np.array([ensemble.step([z[k]])[:2] for k in range(steps)])

    q_diff = (process_noise_block(spec0, 1.0) + process_noise_block(spec1, 1.0))[:2, :2]
    oracle = _scalar_difference_filter(z, q_diff, r, steps)

    scale = np.max(np.abs(oracle), axis=0)
    assert np.all(np.abs(full - oracle) <= 1e-10 * scale), np.max(np.abs(full - oracle), axis=0)
    print("✅ Differential estimates match within 1e-10 relative over 1000 steps")


def test_nis_consistency():
    """Model-matched simulation: NIS mean inside the chi-square band, innovations white."""
    print("\n" + "=" * 60)
    print("Testing Filter Consistency")
    print("=" * 60)

    specs = (NoiseSpec(1e-2, 1e-4), NoiseSpec(2e-2, 1e-4), NoiseSpec(1e-2, 2e-4))
    r = 1e-2
    model = FilterModel(specs, 1.0, r)
    steps = 1000

    rng = np.random.default_rng(31)
    truth = rng.standard_normal(9)
    truth[2::3] = 0.0
    phi = model.transition_matrix()
    factor = np.linalg.cholesky(model.process_noise() + 1e-30 * np.eye(9))
    h = model.measurement_matrix()

    ensemble = EnsembleFilter(model)
    p0 = np.eye(9)
    p0[2::3, 2::3] = 0.0
    ensemble.state = FilterState(np.zeros(9), p0, 0.0)
    nis = []
    innovations = []
    for k in range(steps):
        if k > 0:
            truth = phi @ truth + factor @ rng.standard_normal(9)
        z = h @ truth + np.sqrt(r) * rng.standard_normal(2)
        ensemble.step(z)
        nis.append(ensemble.last_innovation.nis)
        innovations.append(ensemble.last_innovation.innovation)

    nis = np.array(nis)
    dof = model.num_clocks - 1
    low, high = chi2.ppf([0.0005, 0.9995], df=dof * steps) / steps
    print(f"   mean NIS {nis.mean():.3f}, band [{low:.3f}, {high:.3f}]")
    assert low <= nis.mean() <= high
    print("✅ Mean NIS inside the chi-square band")

    innovations = np.array(innovations)[50:]
    n = innovations.shape[0]
    for column in range(dof):
        series = innovations[:, column] - innovations[:, column].mean()
        lag1 = np.sum(series[1:] * series[:-1]) / np.sum(series * series)
        assert abs(lag1) < 3.0 / np.sqrt(n), lag1
    print("✅ Innovations white at lag 1")


def test_long_run_boundedness():
    """Covariance stays bounded over many cycles on the detection preset."""
    print("\n" + "=" * 60)
    print("Testing Long-Run Boundedness")
    print("=" * 60)

    config = load_scenario_config("benign-static").with_overrides(duration=20_000)
    model = filter_model_for(config)
    log = measurement_log(simulate(config), config.quantization)
    ensemble = EnsembleFilter(model)
    reference = None
    for k in range(len(log)):
        ensemble.step(log.z[k])
        if k == 100:
            reference = np.max(np.diag(ensemble.state.p))
    final = np.max(np.diag(ensemble.state.p))
    assert final < 1e6 * reference
    assert is_symmetric_psd(ensemble.state.p)
    print(f"✅ Max diagonal {final:.3e} vs {reference:.3e} at step 100")


def test_missed_measurements():
    """Gaps and NaN rows are bridged with predict-only steps."""
    print("\n" + "=" * 60)
    print("Testing Missed Measurements")
    print("=" * 60)

    config = load_scenario_config("texbat2-like")
    log = measurement_log(simulate(config), config.quantization)
    z = log.z.copy()
    z[200, :] = np.nan
    z[201, 1] = np.nan
    keep = np.ones(len(log), dtype=bool)
    keep[300:305] = False
    gappy = MeasurementLog(log.epochs[keep], z[keep], log.attack_truth[keep])
    estimates = run_filter(gappy, filter_model_for(config))
    assert len(estimates) == int(keep.sum())
    assert np.isnan(estimates.nis[200]) and np.isfinite(estimates.nis[201])
    assert np.all(np.isfinite(estimates.theta_hat))
    print("✅ NaN rows, partial rows and epoch gaps handled")


def test_cold_start_on_presets():
    """From P0 = I the covariance stays PSD while it collapses onto the measurement scale."""
    print("\n" + "=" * 60)
    print("Testing Cold Start on Presets")
    print("=" * 60)

    config = load_scenario_config("texbat2-like")
    model = filter_model_for(config)
    log = measurement_log(simulate(config), config.quantization)
    ensemble = EnsembleFilter(model)
    for k in range(60):
        ensemble.step(log.z[k])
        assert is_symmetric_psd(ensemble.state.p), k
        assert np.linalg.eigvalsh(ensemble.state.p)[0] >= -1e-12 * np.trace(ensemble.state.p), k
    assert np.max(np.diag(ensemble.state.p)) < 1.0
    print("✅ PSD through the first 60 epochs of the ramp preset")

    for path in sorted(Path(Config.PRESETS_DIR).glob("*.json")):
        preset = load_scenario_config(path).with_overrides(duration=300)
        preset_log = measurement_log(simulate(preset), preset.quantization)
        estimates = run_filter(preset_log, filter_model_for(preset))
        assert np.all(np.isfinite(estimates.theta_hat)), path.stem
        assert np.all(estimates.theta_var >= 0.0) and np.all(estimates.gamma_var >= 0.0), path.stem
        print(f"   {path.stem}: {len(estimates)} epochs")
    print("✅ Every preset filters end to end without a numerical failure")

    # An update against an O(1) prior with a 1e-18 measurement variance
    nearly_exact = FilterModel((NoiseSpec(), NoiseSpec(), NoiseSpec()), 1.0, 2e-18)
    state, _ = update(build_filter(nearly_exact), [1e-7, -2e-7], nearly_exact)
    assert is_symmetric_psd(state.p)
    assert np.linalg.eigvalsh(state.p)[0] >= -1e-12 * np.trace(state.p)
    print("✅ Single update from the identity prior stays PSD")


if __name__ == "__main__":
    print("\n🧪 Starting Ensemble Filter Tests\n")
    test_build_filter()
    test_predict()
    test_update_and_rebase()
    test_deterministic_convergence()
    test_scalar_oracle()
    test_nis_consistency()
    test_long_run_boundedness()
    test_missed_measurements()
    test_cold_start_on_presets()
    print("\n" + "=" * 60)
    print("✅ ALL ENSEMBLE FILTER TESTS PASSED!")
    print("=" * 60)
