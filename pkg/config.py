#!/usr/bin/env python3
"""
fedfilter Configuration
Centralized configuration for all fedfilter settings
"""

# LMS Filter Settings
TAP_LEN = 4  # predict sample t from the L previous samples
STEP_SIZE_FRACTION = 0.5  # alpha = fraction * alpha_max
WARMUP_EPOCHS = 5

# Device Settings
WARMUP_LEN = 256  # samples per device used to train the initial model
RETRAIN_HISTORY = 64  # real samples kept on the device for retraining
RETRAIN_EPOCHS = 5

# Fog Server Settings
FRACTION_K = 0.8  # fraction of devices averaged per round
RENORMALIZE_WEIGHTS = True  # False = n_k/n weights exactly as printed
MONITOR_WINDOW = 256  # trailing rows used for the E||Delta||_F estimate
BOUND_RTOL = 1e-9

# Eigensolver Settings
JACOBI_TOL = 1e-12  # off-diagonal mass relative to ||A||_F
JACOBI_MAX_SWEEPS = 100
SYMMETRY_ATOL = 1e-9

# Dataset Settings
SAMPLE_PERIOD_S = 30.0
DEFAULT_COLUMNS = (1, 2, 3)  # chest accelerometer
DEFAULT_DEVICES = 10
DEFAULT_DELTA = 0.5  # used when neither --delta nor --tol is given

# Sweep Settings
SWEEP_DELTAS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
SWEEP_DEVICE_COUNTS = (10, 20, 30, 40, 50)
SWEEP_TOLS = (0.01, 0.02, 0.05, 0.1, 0.2)  # normalized tolerable perturbation

# Synthetic Fallback Settings
SYNTHETIC_PHI = 0.95
SYNTHETIC_NOISE = 1.0
SYNTHETIC_SAMPLES = 10000  # per device

# Packet / Energy Settings
HEADER_BYTES = 16
VALUE_BYTES = 8
ENERGY_PER_PACKET = 1.0
TTI = 1.0

# Seed Settings
DEFAULT_SEED = 0
SEED_ENV_VAR = "FEDFILTER_SEED"

# Logging Settings
LOG_LEVEL = "INFO"  # DEBUG, INFO, WARNING, ERROR
VERBOSE_OUTPUT = True

# Performance Settings
SWEEP_JOBS = 1  # joblib workers for sweep points
