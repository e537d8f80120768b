"""
Tick-driven simulation of devices and fog.

One tick is one row: every device samples at once, messages are merged in
device-id order, and the fog consumes them before predicting the row. The
channel is error-free, so every message arrives in the tick it was sent.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

import config
from fog.fog_server import FogServer
from fog.perturbation import (
    covariance,
    normalized_tol,
    solve_delta,
    sym_eigenvalues,
    tol_f,
    trace_yty,
    uniform_variance,
)
from lms_filter.device_node import (
    apply_filter_param,
    device_step,
    init_device,
    summon,
    write_back,
)
from lms_filter.lms_core import SampleSeries
from simulation.dataset import load_dataset, partition_devices, synthetic_series
from utils.errors import ConfigError, DatasetError, FedFilterError, SimulationError

logger = logging.getLogger(__name__)

SWEEP_DELTA_COLUMNS = ("delta", "normalized_tol", "suppression_ratio", "transmissions")
SWEEP_TOL_COLUMNS = ("tol_normalized", "delta", "suppression_ratio", "transmissions")
SWEEP_DEVICES_COLUMNS = ("n_devices", "energy_efficiency")


@dataclass(frozen=True)
class SimConfig:
    n_devices: int = config.DEFAULT_DEVICES
    tap_len: int = config.TAP_LEN
    alpha_policy: Optional[tuple] = None
    delta: Optional[float] = None
    tol_f: Optional[float] = None
    tol_normalized: bool = False  # tol_f is given on the normalized scale
    fraction_k: float = config.FRACTION_K
    renormalize: bool = config.RENORMALIZE_WEIGHTS
    warmup_len: int = config.WARMUP_LEN
    warmup_epochs: int = config.WARMUP_EPOCHS
    retrain_history: int = config.RETRAIN_HISTORY
    retrain_epochs: int = config.RETRAIN_EPOCHS
    monitor_window: int = config.MONITOR_WINDOW
    rebalance: bool = True
    seed: int = config.DEFAULT_SEED
    energy_per_packet: float = config.ENERGY_PER_PACKET
    header_bytes: int = config.HEADER_BYTES
    value_bytes: int = config.VALUE_BYTES
    tti: float = config.TTI
    dataset: Optional[str] = None  # None = synthetic AR(1)
    columns: tuple = config.DEFAULT_COLUMNS
    samples_per_device: int = config.SYNTHETIC_SAMPLES

    def validate(self):
        if (self.delta is None) == (self.tol_f is None):
            raise ConfigError("set exactly one of delta and tol_f")
        primary = self.delta if self.delta is not None else self.tol_f
        if math.isnan(primary) or primary < 0:
            raise ConfigError(f"delta / tol_f must be >= 0, got {primary}")
        if self.n_devices < 1:
            raise ConfigError(f"need at least one device, got {self.n_devices}")
        if self.tap_len < 1:
            raise ConfigError(f"tap length must be >= 1, got {self.tap_len}")
        if self.warmup_len < self.tap_len + 1:
            raise ConfigError(f"warmup of {self.warmup_len} samples is too short for {self.tap_len} taps")
        if not 0.0 < self.fraction_k <= 1.0:
            raise ConfigError(f"fraction K must be in (0, 1], got {self.fraction_k}")
        if self.energy_per_packet <= 0:
            raise ConfigError(f"energy per packet must be > 0, got {self.energy_per_packet}")
        if self.monitor_window < 1:
            raise ConfigError(f"monitor window must be >= 1, got {self.monitor_window}")
        return self

    def payload_bytes(self):
        return self.header_bytes + 2 * self.tap_len * self.value_bytes


@dataclass
class RunMetrics:
    n_devices: int
    samples_total: int
    transmissions_total: int
    initial_transmissions: int
    forced_transmissions: int
    suppressed_total: int
    suppression_ratio: float
    bytes_sent: int
    energy_efficiency: float
    max_abs_recon_error: float
    recon_mse: float
    averaged_mse: float
    delta_initial: float
    delta_final: float
    tol_f: float
    normalized_tol: Optional[float]
    rebalance_count: int
    perturb_exceed_count: int
    perturb_trace: list = field(default_factory=list)
    rebalance_ticks: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class OperatingPoint:
    delta: float
    tol_f: float
    normalized_tol: Optional[float]


def load_source(cfg):
    """Series selected by the config: a dataset file or the synthetic stream"""
    if cfg.dataset:
        return load_dataset(cfg.dataset, cfg.columns)
    return synthetic_series(cfg.n_devices * cfg.samples_per_device, cfg.seed)


def _warmup_block(partition, cfg):
    rows = min(cfg.monitor_window, cfg.warmup_len)
    return np.column_stack([s.values[cfg.warmup_len - rows:cfg.warmup_len] for s in partition])


def resolve_operating_point(cfg, partition):
    """Derive the missing one of (delta, tol_f) from the devices' warmup rows"""
    block = _warmup_block(partition, cfg)
    m, n = block.shape
    trace = trace_yty(block)
    spectrum = sym_eigenvalues(covariance(block))

    if cfg.delta is not None:
        delta = float(cfg.delta)
        budget = math.inf if math.isinf(delta) else tol_f(trace, [uniform_variance(delta)] * n, m, n)
    else:
        budget = float(cfg.tol_f)
        if cfg.tol_normalized:
            scale = math.sqrt(float(np.sum(spectrum.as_array() ** 2)) / n)
            budget = budget * scale if budget else 0.0
        delta = solve_delta(trace, m, n, budget)

    try:
        norm = normalized_tol(budget, spectrum)
    except ZeroDivisionError:
        norm = None
    return OperatingPoint(delta, budget, norm)


def energy_efficiency(data_volumes, energy_per_packet, packets, tti=config.TTI):
    """
    Sum over devices of d_n / (E_n * r_n * TTI).

    Scalars are broadcast; packet counts below 1 are clamped to 1 (every device
    uploads at least its initial model).
    """
    try:
        d, e, r = np.broadcast_arrays(
            np.atleast_1d(np.asarray(data_volumes, dtype=np.float64)),
            np.asarray(energy_per_packet, dtype=np.float64),
            np.asarray(packets, dtype=np.float64),
        )
    except ValueError:
        raise ConfigError(
            f"per-device inputs disagree in length: {np.shape(data_volumes)}, "
            f"{np.shape(energy_per_packet)}, {np.shape(packets)}"
        ) from None
    r = np.maximum(r, 1.0)
    if np.any(e <= 0):
        raise ConfigError("energy per packet must be > 0")
    if tti <= 0:
        raise ConfigError(f"TTI must be > 0, got {tti}")
    if np.any(d < 0):
        raise ConfigError("data volume must be >= 0")
    return float(np.sum(d / (e * r * tti)))


def run(cfg, series=None):
    """
    Simulate every device and the fog over the post-warmup horizon.

    Returns (RunMetrics, recon_matrix, averaged_matrix); both matrices are
    horizon x n_devices.
    """
    cfg.validate()
    series = load_source(cfg) if series is None else series
    partition = partition_devices(series, cfg.n_devices, min_length=cfg.warmup_len + 1)
    point = resolve_operating_point(cfg, partition)
    real = np.column_stack([s.values[cfg.warmup_len:] for s in partition])
    horizon, n = real.shape

    fog = FogServer([s.device_id for s in partition], point.tol_f, point.delta, cfg.fraction_k,
                    cfg.seed, cfg.renormalize, cfg.monitor_window, _warmup_block(partition, cfg))
    devices = []
    for s in partition:
        warmup = SampleSeries(s.device_id, s.values[:cfg.warmup_len], s.period_s)
        state, msg = init_device(s.device_id, warmup, cfg.tap_len, cfg.alpha_policy, point.delta,
                                 cfg.warmup_epochs, cfg.retrain_history, cfg.retrain_epochs)
        fog.handle_update(msg)
        devices.append(state)

    recon = np.empty((horizon, n))
    averaged = np.empty((horizon, n))
    suppressed = np.zeros((horizon, n), dtype=bool)
    delta_used = np.empty((horizon, n))
    trace = []
    sent = np.zeros(n, dtype=np.int64)
    forced = 0
    rebalance_ticks = []
    exceeds = 0

    logger.info("running %d devices x %d ticks, delta %.4g, Tol_F %.4g", n, horizon, point.delta, point.tol_f)
    for t in range(horizon):
        try:
            fog.average_models()
            averaged[t] = fog.averaged_prediction()

            messages = []
            for i, state in enumerate(devices):
                delta_used[t, i] = state.delta
                was_summoned = state.summoned
                state, msg = device_step(state, real[t, i])
                devices[i] = state
                recon[t, i] = state.recon_window[-1]
                if msg is None:
                    suppressed[t, i] = True
                    continue
                write_back(recon[:, i], msg)
                messages.append(msg)
                sent[i] += 1
                forced += int(was_summoned)

            for msg in messages:
                fog.handle_update(msg)
            fog.advance(t)

            estimate, exceeded = fog.monitor_perturbation()
            trace.append(estimate)
            if exceeded and cfg.rebalance:
                new_delta, summoned = fog.rebalance()
                rebalance_ticks.append(t)
                devices = [summon(apply_filter_param(s, new_delta)) if s.device_id in summoned else s
                           for s in devices]
            elif exceeded:
                exceeds += 1
        except FedFilterError as exc:
            raise SimulationError(t, exc) from exc

    fog_recon = fog.reconstruction()
    if not np.array_equal(fog_recon, recon):
        row = int(np.argwhere(np.any(fog_recon != recon, axis=1))[0][0])
        raise SimulationError(row, "fog reconstruction diverged from the devices")

    errors = np.abs(real - recon)
    violated = suppressed & (errors > delta_used)
    if np.any(violated):
        row = int(np.argwhere(np.any(violated, axis=1))[0][0])
        raise SimulationError(row, "suppressed sample outside the dead-band")

    samples_total = horizon * n
    transmissions = int(sent.sum())
    metrics = RunMetrics(
        n_devices=n,
        samples_total=samples_total,
        transmissions_total=transmissions,
        initial_transmissions=n,
        forced_transmissions=forced,
        suppressed_total=int(suppressed.sum()),
        suppression_ratio=1.0 - transmissions / samples_total if samples_total else 0.0,
        bytes_sent=transmissions * cfg.payload_bytes(),
        energy_efficiency=energy_efficiency(horizon * cfg.value_bytes, cfg.energy_per_packet, sent + 1, cfg.tti),
        max_abs_recon_error=float(errors[suppressed].max()) if suppressed.any() else 0.0,
        recon_mse=float(np.mean((recon - real) ** 2)) if samples_total else 0.0,
        averaged_mse=float(np.mean((averaged - real) ** 2)) if samples_total else 0.0,
        delta_initial=point.delta,
        delta_final=fog.delta,
        tol_f=point.tol_f,
        normalized_tol=point.normalized_tol,
        rebalance_count=len(rebalance_ticks),
        perturb_exceed_count=exceeds,
        perturb_trace=[float(v) for v in trace],
        rebalance_ticks=rebalance_ticks,
    )
    logger.info("suppressed %.1f%% of %d samples, %d rebalances",
                100.0 * metrics.suppression_ratio, samples_total, len(rebalance_ticks))
    return metrics, recon, averaged


def horizon_matrix(cfg, series=None):
    """Real data over the simulated horizon, in the same layout as run()'s matrices"""
    series = load_source(cfg) if series is None else series
    partition = partition_devices(series, cfg.n_devices, min_length=cfg.warmup_len + 1)
    return np.column_stack([s.values[cfg.warmup_len:] for s in partition])


def _progress(items, label):
    return tqdm(items, desc=label, disable=not config.VERBOSE_OUTPUT, leave=False)


def _delta_point(cfg, series):
    metrics, _, _ = run(cfg, series)
    return {
        "delta": cfg.delta,
        "normalized_tol": metrics.normalized_tol,
        "suppression_ratio": metrics.suppression_ratio,
        "transmissions": metrics.transmissions_total,
    }


def sweep_delta(cfg, deltas, series=None, jobs=config.SWEEP_JOBS):
    """
    Communication overhead and normalized tolerance for each delta.

    delta is the controlled variable here, so rebalancing is switched off.
    """
    deltas = [float(d) for d in deltas]
    if len(deltas) < 2:
        raise ConfigError(f"a delta sweep needs at least 2 values, got {len(deltas)}")
    series = load_source(cfg) if series is None else series
    configs = [replace(cfg, delta=d, tol_f=None, tol_normalized=False, rebalance=False) for d in deltas]
    return Parallel(n_jobs=jobs)(
        delayed(_delta_point)(c, series) for c in _progress(configs, "sweep delta")
    )


def _tol_point(cfg, series):
    metrics, _, _ = run(cfg, series)
    return {
        "tol_normalized": cfg.tol_f,
        "delta": metrics.delta_initial,
        "suppression_ratio": metrics.suppression_ratio,
        "transmissions": metrics.transmissions_total,
    }


def sweep_tol(cfg, tolerances, series=None, jobs=config.SWEEP_JOBS):
    """Delta and communication overhead for each normalized tolerance"""
    tolerances = [float(t) for t in tolerances]
    if len(tolerances) < 2:
        raise ConfigError(f"a tolerance sweep needs at least 2 values, got {len(tolerances)}")
    series = load_source(cfg) if series is None else series
    configs = [replace(cfg, delta=None, tol_f=t, tol_normalized=True) for t in tolerances]
    return Parallel(n_jobs=jobs)(
        delayed(_tol_point)(c, series) for c in _progress(configs, "sweep tol")
    )


def _devices_point(cfg, series):
    metrics, _, _ = run(cfg, series)
    return {"n_devices": cfg.n_devices, "energy_efficiency": metrics.energy_efficiency}


def sweep_devices(cfg, counts, series=None, jobs=config.SWEEP_JOBS):
    """
    Energy efficiency for each device count at a fixed per-device data volume.

    A single-device baseline row is always included. Rebalancing is off so
    every device keeps the same trace and delta across rows.
    """
    counts = sorted({int(c) for c in counts} | {1})
    if counts[0] < 1:
        raise ConfigError(f"device counts must be >= 1, got {counts[0]}")
    largest = counts[-1]
    if series is None:
        if cfg.dataset:
            series = load_dataset(cfg.dataset, cfg.columns)
        else:
            series = synthetic_series(largest * cfg.samples_per_device, cfg.seed)
    stream = np.concatenate([s.values for s in series])
    per_device = stream.size // largest
    if per_device < cfg.warmup_len + 1:
        raise DatasetError(
            f"{stream.size} samples leave {per_device} per device for {largest} devices, "
            f"need at least {cfg.warmup_len + 1}"
        )

    period_s = series[0].period_s
    jobs_cfg = [
        (replace(cfg, n_devices=c, rebalance=False), [SampleSeries(0, stream[:c * per_device], period_s)])
        for c in counts
    ]
    return Parallel(n_jobs=jobs)(
        delayed(_devices_point)(c, s) for c, s in _progress(jobs_cfg, "sweep devices")
    )
