"""
Fog-side filter model averaging.

The fog keeps one synchronized reconstruction per device (the column it can
rebuild from the device's model and window), averages the shared models into
eta, predicts with eta, and watches the perturbation estimate against Tol_F.
"""

import logging
from dataclasses import dataclass

import numpy as np

import config
from fog.perturbation import solve_delta, tol_f, trace_yty, uniform_variance
from lms_filter.lms_core import FilterModel, advance_window, predict
from utils.errors import ContractViolation, StaleUpdateError, UnknownDeviceError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FogState:
    """Read-only snapshot of a FogServer"""
    device_models: dict  # device_id -> (FilterModel, n_k)
    recon_matrix: np.ndarray
    avg_model: FilterModel
    tol_f: float
    delta: float
    fraction_k: float
    rng_seed: int
    perturb_estimate: float


class _ReconBuffer:
    """Growing m x n matrix whose columns may briefly differ in length"""

    def __init__(self, n_columns, capacity=1024):
        self.data = np.zeros((capacity, n_columns))
        self.lengths = np.zeros(n_columns, dtype=np.int64)

    @property
    def rows(self):
        return int(self.lengths.min()) if self.lengths.size else 0

    def _reserve(self, rows):
        if rows > self.data.shape[0]:
            grown = np.zeros((max(rows, 2 * self.data.shape[0]), self.data.shape[1]))
            grown[:self.data.shape[0]] = self.data
            self.data = grown

    def write(self, row, col, value):
        length = int(self.lengths[col])
        if row > length:
            raise ContractViolation(f"column {col}: row {row} would leave a gap after row {length - 1}")
        if row == length:
            self._reserve(row + 1)
            self.lengths[col] = length + 1
        self.data[row, col] = value

    def view(self, start, stop):
        return self.data[start:stop]


class FogServer:
    def __init__(self, device_ids, tol_f, delta, fraction_k=config.FRACTION_K, seed=0,
                 renormalize=config.RENORMALIZE_WEIGHTS, monitor_window=config.MONITOR_WINDOW,
                 history=None):
        """
        Fog server for a fixed set of devices.

        Args:
            device_ids: ids of every device that will report
            tol_f: tolerable perturbation budget
            delta: current homogeneous filter parameter
            fraction_k: fraction of devices averaged per round, in (0, 1]
            seed: seed for the device selection generator
            renormalize: make the selected weights sum to 1
            monitor_window: trailing rows used for the perturbation estimate
            history: real rows that precede row 0 (m x n), used to fill the
                monitoring window before the reconstruction has enough rows
        """
        if not 0.0 < fraction_k <= 1.0:
            raise ContractViolation(f"fraction K must be in (0, 1], got {fraction_k}")
        if monitor_window < 1:
            raise ContractViolation(f"monitor window must be >= 1, got {monitor_window}")

        self.device_ids = sorted(int(d) for d in device_ids)
        self._column = {d: i for i, d in enumerate(self.device_ids)}
        self.tol_f = float(tol_f)
        self.delta = float(delta)
        self.fraction_k = float(fraction_k)
        self.seed = seed
        self.renormalize = renormalize
        self.monitor_window = int(monitor_window)

        self.models = {}
        self.sample_counts = {}
        self.windows = {}
        self.last_timestamp = {}
        self.avg_model = None
        self.last_selection = ()
        self.perturb_estimate = 0.0
        self.pending = set()
        self.decision_log = []

        self._rng = np.random.default_rng(seed)
        self._recon = _ReconBuffer(len(self.device_ids))
        self._history = self._check_history(history)

    @property
    def n(self):
        return len(self.device_ids)

    @property
    def rows(self):
        return self._recon.rows

    def handle_update(self, msg):
        """Install a device's new model and resynchronize its window"""
        if msg.device_id not in self._column:
            raise UnknownDeviceError(f"update from unknown device {msg.device_id}")
        last = self.last_timestamp.get(msg.device_id)
        if last is not None and msg.timestamp <= last:
            raise StaleUpdateError(
                f"device {msg.device_id}: update at t={msg.timestamp} is not newer than t={last}"
            )
        col = self._column[msg.device_id]
        first = msg.timestamp - msg.sync_samples.size + 1
        if msg.timestamp >= 0 and msg.timestamp > self._recon.lengths[col]:
            raise ContractViolation(
                f"device {msg.device_id}: update at t={msg.timestamp} skips rows "
                f"(reconstruction has {self._recon.lengths[col]})"
            )

        self.models[msg.device_id] = msg.model
        self.sample_counts[msg.device_id] = int(msg.sample_count)
        self.windows[msg.device_id] = np.array(msg.sync_samples)
        self.last_timestamp[msg.device_id] = msg.timestamp
        for k, value in enumerate(msg.sync_samples):
            if first + k >= 0:
                self._recon.write(first + k, col, value)
        self.pending.discard(msg.device_id)

    def advance(self, t):
        """Append row t, predicting every device that did not report at t"""
        missing = [d for d in self.device_ids if d not in self.models]
        if missing:
            raise ContractViolation(f"devices {missing} never sent an initial model")
        for device_id in self.device_ids:
            col = self._column[device_id]
            length = int(self._recon.lengths[col])
            if length == t + 1:
                continue  # real value already written by handle_update
            if length != t:
                raise ContractViolation(f"device {device_id}: advancing to row {t} with {length} rows")
            value = predict(self.models[device_id], self.windows[device_id])
            self._recon.write(t, col, value)
            self.windows[device_id] = advance_window(self.windows[device_id], value)

    def average_models(self):
        """Weighted average eta of a random fraction K of the device models"""
        present = [d for d in self.device_ids if d in self.models]
        if not present:
            raise ContractViolation("no device models to average")
        tap_lens = {self.models[d].tap_len for d in present}
        if len(tap_lens) != 1:
            raise ContractViolation(f"models have different tap lengths: {sorted(tap_lens)}")

        count = max(1, int(round(self.fraction_k * len(present))))
        if count < len(present):
            picked = self._rng.choice(len(present), size=count, replace=False)
            selected = [present[i] for i in sorted(picked)]
        else:
            selected = present

        total = sum(self.sample_counts[d] for d in present)
        chosen = sum(self.sample_counts[d] for d in selected)
        norm = chosen if self.renormalize else total
        if norm == 0:
            raise ContractViolation("selected devices report zero training samples")

        weights = np.zeros(tap_lens.pop())
        step_size = 0.0
        for device_id in selected:
            share = self.sample_counts[device_id] / norm
            weights = weights + share * self.models[device_id].weights
            step_size += self.sample_counts[device_id] / chosen * self.models[device_id].step_size

        self.avg_model = FilterModel(weights, step_size)
        self.last_selection = tuple(selected)
        return self.avg_model

    def averaged_prediction(self):
        """eta^T . window for every device, in device-id order"""
        if self.avg_model is None:
            self.average_models()
        row = np.array([predict(self.avg_model, self.windows[d]) for d in self.device_ids])
        self.decision_log.append(row)
        return row

    def _check_history(self, history):
        if history is None:
            return np.zeros((0, self.n))
        block = np.asarray(history, dtype=np.float64)
        if block.ndim != 2 or block.shape[1] != self.n:
            raise ContractViolation(f"history must be m x {self.n}, got shape {block.shape}")
        return block[-self.monitor_window:]

    def _window(self):
        rows = self.rows
        recon = self._recon.view(max(0, rows - self.monitor_window), rows)
        missing = self.monitor_window - recon.shape[0]
        if missing <= 0 or self._history.shape[0] == 0:
            return recon
        return np.vstack([self._history[-missing:], recon])

    def monitor_perturbation(self):
        """
        Estimate E||Delta||_F from the trailing window and compare it to Tol_F.

        The window slides over history rows first, then the reconstruction.
        Returns (estimate, exceeded); no excess is reported while a summoned
        update is outstanding.
        """
        window = self._window()
        if window.shape[0] == 0:
            raise ContractViolation("no reconstructed rows to monitor")
        if np.isinf(self.delta):
            estimate = np.inf
        else:
            sigma_sq = [uniform_variance(self.delta)] * self.n
            estimate = tol_f(trace_yty(window), sigma_sq, window.shape[0], self.n)
        self.perturb_estimate = estimate

        exceeded = bool(not self.pending and estimate > self.tol_f * (1.0 + config.BOUND_RTOL))
        return estimate, exceeded

    def rebalance(self):
        """
        Pick delta so the current window sits exactly on Tol_F (never raising
        it), then summon every device.
        """
        window = self._window()
        rows = max(window.shape[0], 1)
        new_delta = min(solve_delta(trace_yty(window), rows, self.n, self.tol_f), self.delta)
        logger.info("perturbation budget exceeded at row %d: delta %.4g -> %.4g",
                    self.rows, self.delta, new_delta)
        self.delta = new_delta
        self.pending = set(self.device_ids)
        return new_delta, list(self.device_ids)

    def reconstruction(self):
        return np.array(self._recon.view(0, self.rows))

    def snapshot(self):
        models = {d: (self.models[d], self.sample_counts[d]) for d in self.models}
        return FogState(models, self.reconstruction(), self.avg_model, self.tol_f, self.delta,
                        self.fraction_k, self.seed, self.perturb_estimate)
