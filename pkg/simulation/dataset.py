"""
Dataset ingestion and device partitioning.

MHEALTH logs are plain text, one sample per row, 23 tab-separated numeric
columns. Columns are addressed 1-based, as in the dataset description.
"""

import logging
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

import config
from lms_filter.lms_core import SampleSeries
from utils.errors import DatasetError

logger = logging.getLogger(__name__)


def load_dataset(path, columns=config.DEFAULT_COLUMNS, period_s=config.SAMPLE_PERIOD_S):
    """Read the selected 1-based columns of a whitespace-separated log file"""
    path = Path(path)
    columns = [int(c) for c in columns]
    if not columns:
        raise DatasetError("no columns selected")
    if min(columns) < 1:
        raise DatasetError(f"columns are 1-based, got {min(columns)}")
    if not path.is_file():
        raise DatasetError(f"dataset not found: {path}")

    rows = []
    with path.open("r") as handle:
        for line_no, line in enumerate(handle, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) < max(columns):
                raise DatasetError(
                    f"{path}:{line_no}: row has {len(fields)} columns, column {max(columns)} requested"
                )
            try:
                rows.append([float(fields[c - 1]) for c in columns])
            except ValueError:
                raise DatasetError(f"{path}:{line_no}: non-numeric value in row") from None

    if not rows:
        raise DatasetError(f"{path}: no data rows")
    data = np.array(rows)
    if not np.all(np.isfinite(data)):
        bad = int(np.argwhere(~np.all(np.isfinite(data), axis=1))[0][0]) + 1
        raise DatasetError(f"{path}: non-finite value in data row {bad}")

    logger.info("loaded %d rows x %d columns from %s", data.shape[0], len(columns), path)
    return [SampleSeries(i, data[:, i], period_s) for i in range(len(columns))]


def partition_devices(series, n_devices, min_length=1):
    """
    Split the selected series into n equal contiguous chunks, one per device.

    The series are joined end to end in column order, and any remainder is
    dropped from the tail.
    """
    if n_devices < 1:
        raise DatasetError(f"need at least one device, got {n_devices}")
    if not series:
        raise DatasetError("no series to partition")
    stream = np.concatenate([s.values for s in series])
    period_s = series[0].period_s
    chunk = stream.size // n_devices
    if chunk < max(min_length, 1):
        raise DatasetError(
            f"{stream.size} samples cannot give {n_devices} devices {max(min_length, 1)} samples each"
        )
    dropped = stream.size - chunk * n_devices
    if dropped:
        logger.debug("partition dropped %d tail samples", dropped)
    return [SampleSeries(d, stream[d * chunk:(d + 1) * chunk], period_s) for d in range(n_devices)]


def synthetic_series(n_samples, seed, phi=config.SYNTHETIC_PHI, noise=config.SYNTHETIC_NOISE,
                     period_s=config.SAMPLE_PERIOD_S):
    """Seeded AR(1) stream x_t = phi x_{t-1} + noise * N(0, 1), started at stationarity"""
    rng = np.random.default_rng(seed)
    shocks = rng.standard_normal(n_samples) * noise
    if abs(phi) < 1:
        shocks[0] /= np.sqrt(1.0 - phi * phi)
    values = lfilter([1.0], [1.0, -phi], shocks)
    return [SampleSeries(0, values, period_s)]
