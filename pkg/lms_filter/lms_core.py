"""
Least-Mean-Square adaptive filter.

The predictor estimates sample t from the L previous samples (oldest first),
and training applies the Widrow-Hoff rule theta += alpha * e * window with
e = target - prediction.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

import config
from utils.errors import ContractViolation, DivergenceError, UnboundedStepError

logger = logging.getLogger(__name__)

DIVERGENCE_GROWTH = 4.0  # max epoch mse / mse of the starting weights


def _as_vector(values, name):
    vec = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(vec)):
        raise ContractViolation(f"{name} contains non-finite values")
    vec.flags.writeable = False
    return vec


@dataclass(frozen=True, eq=False)
class FilterModel:
    weights: np.ndarray
    step_size: float = 0.0

    def __post_init__(self):
        weights = _as_vector(self.weights, "weights")
        if weights.size < 1:
            raise ContractViolation("a filter needs at least one tap")
        if not np.isfinite(self.step_size) or self.step_size < 0:
            raise ContractViolation(f"step size must be finite and >= 0, got {self.step_size}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "step_size", float(self.step_size))

    @property
    def tap_len(self):
        return int(self.weights.size)

    @classmethod
    def zeros(cls, tap_len, step_size=0.0):
        return cls(np.zeros(tap_len), step_size)

    def with_step_size(self, step_size):
        return FilterModel(self.weights, step_size)


@dataclass(frozen=True, eq=False)
class SampleSeries:
    device_id: int
    values: np.ndarray
    period_s: float = config.SAMPLE_PERIOD_S

    def __post_init__(self):
        object.__setattr__(self, "values", _as_vector(self.values, "series"))

    def __len__(self):
        return int(self.values.size)


@dataclass(frozen=True)
class TrainReport:
    final_mse: float
    epoch_mse: tuple = field(default_factory=tuple)

    @property
    def epochs(self):
        return len(self.epoch_mse)


@njit
def _dot(weights, window):
    acc = 0.0
    for k in range(weights.shape[0]):
        acc += weights[k] * window[k]
    return acc


@njit
def _train_pass(weights, values, step_size):
    # one Widrow-Hoff pass over every (window, target) pair, in place
    tap_len = weights.shape[0]
    sq_sum = 0.0
    count = 0
    for t in range(tap_len, values.shape[0]):
        acc = 0.0
        for k in range(tap_len):
            acc += weights[k] * values[t - tap_len + k]
        err = values[t] - acc
        sq_sum += err * err
        count += 1
        if err != 0.0:
            scale = step_size * err
            for k in range(tap_len):
                weights[k] += scale * values[t - tap_len + k]
    return sq_sum / count


@njit
def _evaluate_pass(weights, values):
    tap_len = weights.shape[0]
    sq_sum = 0.0
    count = 0
    for t in range(tap_len, values.shape[0]):
        err = values[t] - _dot(weights, values[t - tap_len:t])
        sq_sum += err * err
        count += 1
    return sq_sum / count


def _check_window(model, window):
    window = np.ascontiguousarray(window, dtype=np.float64).reshape(-1)
    if window.size != model.tap_len:
        raise ContractViolation(f"window has {window.size} samples, model has {model.tap_len} taps")
    if not np.all(np.isfinite(window)):
        raise ContractViolation("window contains non-finite values")
    return window


def _check_trainable(series, tap_len):
    if len(series) < tap_len + 1:
        raise ContractViolation(
            f"series of length {len(series)} is too short for {tap_len} taps (need {tap_len + 1})"
        )


def predict(model, window):
    """Return theta^T . window"""
    window = _check_window(model, window)
    return float(_dot(model.weights, window))


def lms_step(model, window, target):
    """
    Apply one Widrow-Hoff update.

    Returns the updated model and the pre-update error target - prediction.
    A zero error returns the model unchanged.
    """
    window = _check_window(model, window)
    if not np.isfinite(target):
        raise ContractViolation(f"target must be finite, got {target}")

    error = float(target) - float(_dot(model.weights, window))
    if error == 0.0:
        return model, error

    weights = model.weights + (model.step_size * error) * window
    if not np.all(np.isfinite(weights)):
        raise DivergenceError(f"weights diverged with step size {model.step_size:g}")
    return FilterModel(weights, model.step_size), error


def evaluate(model, series):
    """Prediction MSE of the model over the series, without updating it"""
    _check_trainable(series, model.tap_len)
    return float(_evaluate_pass(model.weights, series.values))


def train(series, model, epochs):
    """
    Run `epochs` passes of Widrow-Hoff over the series, starting from `model`.

    With alpha * ||x||^2 <= 1 on every window, a pass can at most quadruple the
    MSE of the weights it started from. A larger jump means the step size is
    outside its bound and raises DivergenceError.
    """
    _check_trainable(series, model.tap_len)
    if epochs < 0:
        raise ContractViolation(f"epochs must be >= 0, got {epochs}")
    if epochs == 0:
        return model, TrainReport(evaluate(model, series), ())

    weights = np.array(model.weights, dtype=np.float64)
    epoch_mse = []
    for epoch in range(epochs):
        start_mse = _evaluate_pass(weights, series.values)
        mse = _train_pass(weights, series.values, model.step_size)
        if not (np.all(np.isfinite(weights)) and np.isfinite(mse)):
            raise DivergenceError(
                f"device {series.device_id}: weights diverged in epoch {epoch + 1}/{epochs} "
                f"(step size {model.step_size:g}, {len(series)} samples)"
            )
        if mse > DIVERGENCE_GROWTH * start_mse * (1.0 + 1e-9) + 1e-300:
            raise DivergenceError(
                f"device {series.device_id}: epoch {epoch + 1}/{epochs} mse {mse:.3g} grew from "
                f"{start_mse:.3g} (step size {model.step_size:g} is too large)"
            )
        epoch_mse.append(float(mse))

    logger.debug("device %s trained %d epochs, mse %.3g", series.device_id, epochs, epoch_mse[-1])
    return FilterModel(weights, model.step_size), TrainReport(epoch_mse[-1], tuple(epoch_mse))


def _scaled(values):
    """(values / max|values|, max|values|) so squares cannot under- or overflow"""
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    if scale == 0.0:
        return values, 0.0
    return values / scale, scale


def alpha_max(series, m, tap_len=1):
    """
    Step-size bound 1 / (tap_len * P_Y).

    P_Y is the mean-square of the first m samples; the filter input is a
    tap_len-sample vector, so its power is tap_len * P_Y.
    """
    if m < 1 or m > len(series):
        raise ContractViolation(f"M must be in [1, {len(series)}], got {m}")
    if tap_len < 1:
        raise ContractViolation(f"tap_len must be >= 1, got {tap_len}")
    scaled, scale = _scaled(series.values[:m])
    if scale == 0.0:
        raise UnboundedStepError(f"device {series.device_id}: first {m} samples are all zero")
    power = float(np.mean(scaled * scaled))
    bound = 1.0 / (tap_len * power) / scale / scale
    if not np.isfinite(bound):
        raise UnboundedStepError(f"device {series.device_id}: signal power {scale:.3g}^2 is too small")
    return bound


def window_step_bound(series, tap_len):
    """1 / max ||x||^2 over the training windows of the series"""
    _check_trainable(series, tap_len)
    scaled, scale = _scaled(series.values[:-1])
    if scale == 0.0:
        raise UnboundedStepError(f"device {series.device_id}: every training window is zero")
    peak = float(np.max(np.convolve(scaled * scaled, np.ones(tap_len), mode="valid")))
    bound = 1.0 / peak / scale / scale
    if not np.isfinite(bound):
        raise UnboundedStepError(f"device {series.device_id}: window power {scale:.3g}^2 is too small")
    return bound


def default_step_size(series, tap_len, fraction=config.STEP_SIZE_FRACTION):
    """
    Step size policy: a fraction of the tighter of alpha_max and the window bound.

    The result keeps alpha * ||x||^2 <= fraction on every training window.
    """
    try:
        return fraction * min(alpha_max(series, len(series), tap_len), window_step_bound(series, tap_len))
    except UnboundedStepError:
        # an all-zero series is already predicted exactly by zero weights
        logger.warning("device %s: zero-power series, step size set to 0", series.device_id)
        return 0.0


def advance_window(window, value):
    """Drop the oldest sample and append `value`"""
    out = np.empty_like(window)
    out[:-1] = window[1:]
    out[-1] = value
    out.flags.writeable = False
    return out
