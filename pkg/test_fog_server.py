#!/usr/bin/env python3
"""
Fog server tests: update handling, reconstruction, model averaging and perturbation monitoring
"""

import math

import numpy as np
import pytest

from fog.fog_server import FogServer, FogState
from fog.perturbation import solve_delta, tol_f, uniform_variance
from lms_filter.device_node import UpdateMsg, device_step, init_device, write_back
from lms_filter.lms_core import FilterModel
from simulation.dataset import synthetic_series
from utils.errors import ContractViolation, StaleUpdateError, UnknownDeviceError


def msg(device_id, weights, sync, timestamp, count=100):
    return UpdateMsg(device_id, FilterModel(weights), np.array(sync, dtype=float), count, timestamp)


def fog_with_models(models, counts=None, **kwargs):
    counts = counts or [100] * len(models)
    fog = FogServer(range(len(models)), kwargs.pop("tol_f", 1.0), kwargs.pop("delta", 0.0), **kwargs)
    for device_id, (weights, count) in enumerate(zip(models, counts)):
        fog.handle_update(msg(device_id, weights, np.zeros(len(weights)), -1, count))
    return fog


def two_by_two_fog(delta=1.0, tol=100.0):
    fog = fog_with_models([[1.0], [1.0]], fraction_k=1.0, delta=delta, tol_f=tol, monitor_window=2)
    fog.handle_update(msg(0, [1.0], [1.0], 0))
    fog.handle_update(msg(1, [1.0], [2.0], 0))
    fog.advance(0)
    fog.handle_update(msg(0, [1.0], [3.0], 1))
    fog.handle_update(msg(1, [1.0], [4.0], 1))
    fog.advance(1)
    return fog


# --- construction ---

@pytest.mark.parametrize("k", [0.0, 1.5, -0.2])
def test_fraction_k_out_of_range(k):
    with pytest.raises(ContractViolation):
        FogServer([0, 1], 1.0, 0.5, fraction_k=k)


def test_advance_before_initial_models_raises():
    fog = FogServer([0, 1], 1.0, 0.5)
    fog.handle_update(msg(0, [1.0], [0.0], -1))
    with pytest.raises(ContractViolation):
        fog.advance(0)


# --- handle_update ---

def test_unknown_device_rejected():
    fog = fog_with_models([[1.0]])
    with pytest.raises(UnknownDeviceError):
        fog.handle_update(msg(7, [1.0], [0.0], 0))


def test_duplicate_timestamp_rejected_without_change():
    fog = fog_with_models([[1.0], [0.5]])
    fog.handle_update(msg(0, [2.0], [1.0], 0))
    before = fog.models[0]
    with pytest.raises(StaleUpdateError):
        fog.handle_update(msg(0, [3.0], [1.0], 0))
    assert fog.models[0] is before
    assert fog.windows[0].tolist() == [1.0]


def test_updates_replace_only_their_slots():
    fog = fog_with_models([[1.0], [0.5], [0.25]])
    untouched = fog.models[2]
    fog.handle_update(msg(0, [2.0], [1.0], 0))
    fog.handle_update(msg(1, [3.0], [1.0], 0))
    assert fog.models[0].weights.tolist() == [2.0]
    assert fog.models[1].weights.tolist() == [3.0]
    assert fog.models[2] is untouched


def test_update_that_skips_rows_rejected():
    fog = fog_with_models([[1.0]])
    with pytest.raises(ContractViolation):
        fog.handle_update(msg(0, [1.0], [1.0], 5))


# --- advance ---

def test_advance_zero_models_appends_zero_row():
    fog = fog_with_models([[0.0, 0.0], [0.0, 0.0]])
    fog.advance(0)
    assert fog.reconstruction().tolist() == [[0.0, 0.0]]


def test_advance_identity_tap():
    fog = FogServer([0], 1.0, 0.0)
    fog.handle_update(msg(0, [1.0], [7.0], -1))
    fog.advance(0)
    assert fog.reconstruction().tolist() == [[7.0]]


def test_advance_keeps_real_value_written_by_update():
    fog = fog_with_models([[1.0], [1.0]])
    fog.handle_update(msg(1, [1.0], [9.0], 0))
    fog.advance(0)
    assert fog.reconstruction().tolist() == [[0.0, 9.0]]


def test_fog_reconstruction_matches_devices():
    values = synthetic_series(3 * 800, seed=4)[0].values.reshape(3, 800)
    devices, fog = [], FogServer([0, 1, 2], 1.0, 0.5)
    for device_id in range(3):
        state, first = init_device(device_id, values[device_id, :256], tap_len=4, delta=0.5)
        fog.handle_update(first)
        devices.append(state)

    horizon = values.shape[1] - 256
    device_recon = np.empty((horizon, 3))
    for t in range(horizon):
        messages = []
        for i in range(3):
            devices[i], update = device_step(devices[i], values[i, 256 + t])
            device_recon[t, i] = devices[i].recon_window[-1]
            if update is not None:
                write_back(device_recon[:, i], update)
                messages.append(update)
        for update in messages:
            fog.handle_update(update)
        fog.advance(t)

    assert np.array_equal(fog.reconstruction(), device_recon)
    for state in devices:
        assert np.array_equal(fog.windows[state.device_id], state.recon_window)


# --- average_models ---

def test_average_equal_weights():
    fog = fog_with_models([[1.0, 0.0], [0.0, 1.0]], fraction_k=1.0)
    assert fog.average_models().weights.tolist() == [0.5, 0.5]


def test_average_single_device_is_identity():
    fog = fog_with_models([[0.3, -0.7]], fraction_k=1.0)
    assert fog.average_models().weights.tolist() == [0.3, -0.7]


def test_average_identical_models():
    fog = fog_with_models([[0.25, 0.5], [0.25, 0.5]], fraction_k=1.0)
    assert fog.average_models().weights.tolist() == [0.25, 0.5]


def test_average_weights_by_sample_count():
    fog = fog_with_models([[1.0], [0.0]], counts=[300, 100], fraction_k=1.0)
    assert fog.average_models().weights[0] == pytest.approx(0.75)


def test_average_rejects_mixed_tap_lengths():
    fog = fog_with_models([[1.0], [1.0, 0.0]], fraction_k=1.0)
    with pytest.raises(ContractViolation):
        fog.average_models()


def test_selection_is_seeded():
    models = [[float(i)] for i in range(10)]
    a = fog_with_models(models, fraction_k=0.5, seed=9)
    b = fog_with_models(models, fraction_k=0.5, seed=9)
    for _ in range(5):
        assert a.average_models().weights.tolist() == b.average_models().weights.tolist()
        assert a.last_selection == b.last_selection
        assert len(a.last_selection) == 5


def test_unnormalized_weights_shrink():
    fog = fog_with_models([[2.0], [2.0]], fraction_k=0.5, renormalize=False)
    assert fog.average_models().weights.tolist() == [1.0]


def test_average_stays_inside_model_envelope():
    rng = np.random.default_rng(6)
    models = [rng.normal(size=3).tolist() for _ in range(6)]
    fog = fog_with_models(models, counts=list(rng.integers(10, 500, size=6)), fraction_k=0.5, seed=2)
    for _ in range(10):
        eta = fog.average_models().weights
        chosen = np.array([models[d] for d in fog.last_selection])
        assert np.all(eta >= chosen.min(axis=0) - 1e-12)
        assert np.all(eta <= chosen.max(axis=0) + 1e-12)


def test_average_hides_individual_models():
    fog = fog_with_models([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5 + 1e-3]], counts=[100, 200, 300], fraction_k=1.0)
    eta = fog.average_models().weights
    for model in fog.models.values():
        assert not np.array_equal(eta, model.weights)


# --- averaged_prediction ---

def test_averaged_prediction_identity_model():
    fog = FogServer([0, 1], 1.0, 0.0, fraction_k=1.0)
    fog.handle_update(msg(0, [1.0], [3.0], -1))
    fog.handle_update(msg(1, [1.0], [5.0], -1))
    fog.average_models()
    assert fog.averaged_prediction().tolist() == [3.0, 5.0]
    assert len(fog.decision_log) == 1


def test_averaged_prediction_zero_model():
    fog = fog_with_models([[0.0], [0.0]], fraction_k=1.0)
    fog.average_models()
    assert fog.averaged_prediction().tolist() == [0.0, 0.0]


def test_averaged_prediction_homogeneous_matches_advance():
    fog = FogServer([0, 1], 1.0, 0.0, fraction_k=1.0)
    fog.handle_update(msg(0, [0.5, 0.25], [2.0, 4.0], -1))
    fog.handle_update(msg(1, [0.5, 0.25], [1.0, -1.0], -1))
    fog.average_models()
    averaged = fog.averaged_prediction()
    fog.advance(0)
    assert averaged.tolist() == fog.reconstruction()[0].tolist()


# --- monitoring and rebalance ---

def test_monitor_zero_delta():
    fog = two_by_two_fog(delta=0.0)
    assert fog.monitor_perturbation() == (0.0, False)


def test_monitor_matches_hand_computed_bound():
    fog = two_by_two_fog(delta=1.0)
    sigma_sq = 1.0 / 3.0
    expected = 2.0 * math.sqrt(30.0 * 2 * sigma_sq / (4 * 2)) + math.sqrt(1.0 * 2 * sigma_sq ** 2)
    estimate, exceeded = fog.monitor_perturbation()
    assert estimate == pytest.approx(expected, rel=1e-12)
    assert not exceeded


def test_monitor_estimate_increases_with_delta():
    estimates = [two_by_two_fog(delta=d).monitor_perturbation()[0] for d in (0.1, 0.5, 1.0, 2.0)]
    assert all(a < b for a, b in zip(estimates, estimates[1:]))


def test_monitor_infinite_delta():
    estimate, exceeded = two_by_two_fog(delta=math.inf).monitor_perturbation()
    assert math.isinf(estimate)
    assert exceeded


def test_monitor_reports_before_window_fills():
    fog = fog_with_models([[1.0]], delta=5.0, tol_f=1e-6, monitor_window=3)
    fog.handle_update(msg(0, [1.0], [2.0], 0))
    fog.advance(0)
    estimate, exceeded = fog.monitor_perturbation()
    assert estimate > fog.tol_f
    assert exceeded


def test_monitor_window_starts_from_history():
    fog = FogServer([0], 100.0, 1.0, monitor_window=2, history=[[1.0], [3.0]])
    fog.handle_update(msg(0, [1.0], [4.0], -1))
    fog.advance(0)
    sigma_sq = [uniform_variance(1.0)]
    assert fog.monitor_perturbation()[0] == pytest.approx(tol_f(25.0, sigma_sq, 2, 1), rel=1e-12)
    fog.advance(1)
    assert fog.monitor_perturbation()[0] == pytest.approx(tol_f(32.0, sigma_sq, 2, 1), rel=1e-12)


def test_monitor_with_history_only():
    fog = FogServer([0, 1], 100.0, 1.0, monitor_window=4, history=np.ones((3, 2)))
    estimate, exceeded = fog.monitor_perturbation()
    assert estimate == pytest.approx(tol_f(6.0, [uniform_variance(1.0)] * 2, 3, 2), rel=1e-12)
    assert not exceeded


def test_history_must_match_device_count():
    with pytest.raises(ContractViolation):
        FogServer([0], 1.0, 0.5, history=[[1.0, 2.0]])


def test_rebalance_restores_budget():
    fog = two_by_two_fog(delta=1.0, tol=0.5)
    assert fog.monitor_perturbation()[1]
    new_delta, summoned = fog.rebalance()
    assert new_delta == pytest.approx(solve_delta(30.0, 2, 2, 0.5))
    assert tol_f(30.0, [uniform_variance(new_delta)] * 2, 2, 2) == pytest.approx(0.5, rel=1e-9)
    assert summoned == [0, 1]
    assert fog.delta == new_delta
    estimate, exceeded = fog.monitor_perturbation()
    assert estimate == pytest.approx(0.5, rel=1e-9)
    assert not exceeded


def test_window_keeps_sliding_after_rebalance():
    fog = two_by_two_fog(delta=1.0, tol=0.5)
    fog.rebalance()
    fog.handle_update(msg(0, [1.0], [5.0], 2))
    fog.handle_update(msg(1, [1.0], [6.0], 2))
    fog.advance(2)
    sigma_sq = [uniform_variance(fog.delta)] * 2
    assert fog.monitor_perturbation()[0] == pytest.approx(tol_f(86.0, sigma_sq, 2, 2), rel=1e-12)


def test_rebalance_zero_tolerance():
    fog = two_by_two_fog(delta=1.0, tol=0.0)
    new_delta, _ = fog.rebalance()
    assert new_delta == 0.0


def test_rebalance_never_raises_delta():
    fog = two_by_two_fog(delta=0.1, tol=100.0)
    new_delta, _ = fog.rebalance()
    assert new_delta == 0.1


def test_pending_summons_suppress_monitoring():
    fog = two_by_two_fog(delta=1.0, tol=0.5)
    fog.rebalance()
    fog.delta = 1.0
    fog.handle_update(msg(0, [1.0], [5.0], 2))
    fog.advance(2)
    fog.advance(3)
    assert not fog.monitor_perturbation()[1]
    fog.handle_update(msg(1, [1.0], [6.0], 4))
    fog.advance(4)
    assert fog.pending == set()
    assert fog.monitor_perturbation()[1]


def test_snapshot_is_a_copy():
    fog = two_by_two_fog()
    fog.average_models()
    snap = fog.snapshot()
    assert isinstance(snap, FogState)
    fog.advance(2)
    assert snap.recon_matrix.shape == (2, 2)
    assert snap.device_models[0][1] == 100
    assert snap.delta == fog.delta
