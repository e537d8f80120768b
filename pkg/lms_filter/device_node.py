"""
Device-side dead-band filtering.

Each device predicts its next sample from a reconstructed history it shares
with the fog. While the deviation stays inside [-delta, delta] the device
stays silent and both sides append the prediction. Otherwise it retrains on
its recent real samples and sends the new model plus the last L real samples.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

import config
from lms_filter.lms_core import (
    FilterModel,
    SampleSeries,
    advance_window,
    default_step_size,
    predict,
    train,
)
from utils.errors import ContractViolation

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class UpdateMsg:
    device_id: int
    model: FilterModel
    sync_samples: np.ndarray
    sample_count: int
    timestamp: int

    def __post_init__(self):
        sync = np.array(self.sync_samples, dtype=np.float64)
        if sync.size != self.model.tap_len:
            raise ContractViolation(
                f"update from device {self.device_id} carries {sync.size} sync samples "
                f"for a {self.model.tap_len}-tap model"
            )
        sync.flags.writeable = False
        object.__setattr__(self, "sync_samples", sync)

    def payload_bytes(self, header_bytes=config.HEADER_BYTES, value_bytes=config.VALUE_BYTES):
        return header_bytes + (self.model.tap_len + self.sync_samples.size) * value_bytes


@dataclass(frozen=True, eq=False)
class DeviceState:
    device_id: int
    model: FilterModel
    delta: float
    recon_window: np.ndarray
    history: np.ndarray  # last R real samples, oldest first
    samples_seen: int = 0
    transmissions: int = 0
    deviation: float = 0.0
    retrain_epochs: int = config.RETRAIN_EPOCHS
    summoned: bool = False
    step_fraction: Optional[float] = config.STEP_SIZE_FRACTION  # None keeps a fixed step size


def _push(buffer, value, capacity):
    out = np.append(buffer, value)[-capacity:]
    out.flags.writeable = False
    return out


def init_device(device_id, warmup, tap_len=config.TAP_LEN, alpha_policy=None,
                delta=0.0, epochs=config.WARMUP_EPOCHS,
                history_len=config.RETRAIN_HISTORY, retrain_epochs=config.RETRAIN_EPOCHS):
    """
    Train the initial model on the warmup samples and build the first update.

    alpha_policy is None for the default fraction of alpha_max, ("fraction", f)
    for another fraction, or ("fixed", a) for a constant step size.
    """
    series = warmup if isinstance(warmup, SampleSeries) else SampleSeries(device_id, warmup)
    if len(series) < tap_len + 1:
        raise ContractViolation(
            f"device {device_id}: warmup has {len(series)} samples, need at least {tap_len + 1}"
        )
    if delta < 0:
        raise ContractViolation(f"filter parameter must be >= 0, got {delta}")

    fraction = config.STEP_SIZE_FRACTION
    if alpha_policy is None:
        step_size = default_step_size(series, tap_len, fraction)
    else:
        kind, value = alpha_policy
        if kind == "fraction":
            fraction = float(value)
            step_size = default_step_size(series, tap_len, fraction)
        elif kind == "fixed":
            fraction = None
            step_size = float(value)
        else:
            raise ContractViolation(f"unknown step-size policy {kind!r}")

    model, report = train(series, FilterModel.zeros(tap_len, step_size), epochs)
    logger.debug("device %d warmed up on %d samples, mse %.3g", device_id, len(series), report.final_mse)

    tail = series.values[-tap_len:]
    state = DeviceState(
        device_id=device_id,
        model=model,
        delta=float(delta),
        recon_window=np.array(tail),
        history=_push(np.empty(0), series.values, max(history_len, tap_len + 1)),
        samples_seen=0,
        transmissions=0,
        retrain_epochs=retrain_epochs,
        step_fraction=fraction,
    )
    msg = UpdateMsg(device_id, model, tail, len(series), timestamp=-1)
    return state, msg


def device_step(state, sample):
    """
    Process one real sample.

    Returns (new_state, msg) where msg is None when the sample was suppressed.
    The reconstructed value for this sample is new_state.recon_window[-1].
    """
    if not np.isfinite(sample):
        raise ContractViolation(f"device {state.device_id}: non-finite sample {sample}")

    predicted = predict(state.model, state.recon_window)
    deviation = float(sample) - predicted
    history = _push(state.history, sample, state.history.size)
    seen = state.samples_seen + 1

    if abs(deviation) <= state.delta and not state.summoned:
        return replace(
            state,
            recon_window=advance_window(state.recon_window, predicted),
            history=history,
            samples_seen=seen,
            deviation=deviation,
        ), None

    # retrain on real history; a divergence leaves `state` untouched
    series = SampleSeries(state.device_id, history)
    model = state.model
    if state.step_fraction is not None:
        model = model.with_step_size(default_step_size(series, model.tap_len, state.step_fraction))
    model, _ = train(series, model, state.retrain_epochs)
    sync = history[-model.tap_len:]
    msg = UpdateMsg(state.device_id, model, sync, len(series), timestamp=state.samples_seen)
    return replace(
        state,
        model=model,
        recon_window=np.array(sync),
        history=history,
        samples_seen=seen,
        transmissions=state.transmissions + 1,
        deviation=0.0,
        summoned=False,
    ), msg


def apply_filter_param(state, delta_new):
    """Install the filter parameter broadcast by the fog"""
    if delta_new < 0 or np.isnan(delta_new):
        raise ContractViolation(f"filter parameter must be >= 0, got {delta_new}")
    if delta_new == state.delta:
        return state
    return replace(state, delta=float(delta_new))


def summon(state):
    """Force the next step to retrain and transmit"""
    return replace(state, summoned=True)


def replay(state, samples):
    """
    Feed a trace through device_step.

    Returns (final_state, messages, reconstructed) where reconstructed[k] is the
    device-side value for the k-th sample after sync write-back.
    """
    start = state.samples_seen
    recon = np.empty(len(samples))
    messages = []
    for offset, value in enumerate(samples):
        state, msg = device_step(state, value)
        recon[offset] = state.recon_window[-1]
        if msg is not None:
            messages.append(msg)
            write_back(recon, msg, start)
    return state, messages, recon


def write_back(column, msg, start=0):
    """Write the message's real sync samples at their timestamps"""
    first = msg.timestamp - msg.sync_samples.size + 1
    for k, value in enumerate(msg.sync_samples):
        row = first + k - start
        if 0 <= row < len(column):
            column[row] = value
