"""
Matrix perturbation tools for the fog server.

Covariance A = Y^T Y / m of the real data and A_hat of the reconstructed data
differ by Delta = A - A_hat. The functions here measure that perturbation,
bound its expected Frobenius norm (Tol_F) from the filtering noise variance,
and invert the bound to get the filter parameter delta.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

import config
from utils.errors import ContractViolation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EigenSpectrum:
    values: tuple  # descending

    @property
    def n(self):
        return len(self.values)

    def as_array(self):
        return np.array(self.values, dtype=np.float64)


@dataclass(frozen=True)
class PerturbationBound:
    tol_f: float
    trace_yty: float
    sigma_sq: tuple
    m: int
    n: int

    @classmethod
    def for_data(cls, data, delta):
        """Bound for a homogeneous filter parameter: sigma_i^2 = delta^2 / 3"""
        data = as_data_matrix(data)
        m, n = data.shape
        trace = trace_yty(data)
        sigma_sq = (uniform_variance(delta),) * n
        return cls(tol_f(trace, sigma_sq, m, n), trace, sigma_sq, m, n)

    def recompute(self):
        return tol_f(self.trace_yty, self.sigma_sq, self.m, self.n)


def as_data_matrix(data):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise ContractViolation(f"data matrix must be m x n with m, n >= 1, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ContractViolation("data matrix contains non-finite values")
    return data


def trace_yty(data):
    """Tr(Y^T Y), the sum of squared entries"""
    data = np.asarray(data, dtype=np.float64)
    return float(np.sum(data * data))


def uniform_variance(delta):
    """Variance of Uniform[-delta, delta]"""
    return delta * delta / 3.0


def covariance(data):
    """A = (1/m) Y^T Y"""
    data = as_data_matrix(data)
    cov = data.T @ data / data.shape[0]
    return 0.5 * (cov + cov.T)


def frobenius_norm(matrix):
    return float(np.linalg.norm(np.asarray(matrix, dtype=np.float64), "fro"))


def delta_norm(a, a_hat):
    """||A - A_hat||_F"""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    a_hat = np.atleast_2d(np.asarray(a_hat, dtype=np.float64))
    if a.shape != a_hat.shape:
        raise ContractViolation(f"covariance shapes differ: {a.shape} vs {a_hat.shape}")
    return frobenius_norm(a - a_hat)


def _off_diagonal_norm(a):
    off = a - np.diag(np.diag(a))
    return math.sqrt(float(np.sum(off * off)))


def sym_eigenvalues(matrix, tol=config.JACOBI_TOL, max_sweeps=config.JACOBI_MAX_SWEEPS):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending"""
    a = np.array(np.atleast_2d(matrix), dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation("matrix contains non-finite values")
    scale = frobenius_norm(a)
    if not np.allclose(a, a.T, rtol=0.0, atol=config.SYMMETRY_ATOL * max(1.0, scale)):
        raise ContractViolation("matrix is not symmetric")
    a = 0.5 * (a + a.T)

    n = a.shape[0]
    threshold = tol * scale
    for _ in range(max_sweeps):
        if _off_diagonal_norm(a) <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
    else:
        if _off_diagonal_norm(a) > threshold:
            logger.warning("Jacobi stopped after %d sweeps, off-diagonal mass %.3g",
                           max_sweeps, _off_diagonal_norm(a))

    return EigenSpectrum(tuple(sorted(np.diag(a).tolist(), reverse=True)))


def tol_f(trace, sigma_sq, m, n):
    """
    Upper bound on the expected covariance perturbation:

        2 * sqrt(Tr(Y^T Y) * sum(sigma_i^2) / (m^2 n)) + sqrt((1/m + 1/n) * sum(sigma_i^4))
    """
    sigma_sq = np.asarray(sigma_sq, dtype=np.float64).reshape(-1)
    if m < 1 or n < 1:
        raise ContractViolation(f"m and n must be >= 1, got m={m}, n={n}")
    if sigma_sq.size != n:
        raise ContractViolation(f"expected {n} variances, got {sigma_sq.size}")
    if trace < 0 or np.any(sigma_sq < 0) or np.isnan(trace) or np.any(np.isnan(sigma_sq)):
        raise ContractViolation("trace and variances must be >= 0")

    total = float(np.sum(sigma_sq))
    if total == 0.0:
        return 0.0
    if math.isinf(total):
        return math.inf
    linear = 2.0 * math.sqrt(trace * total / (m * m * n))
    quadratic = math.sqrt((1.0 / m + 1.0 / n) * float(np.sum(sigma_sq * sigma_sq)))
    return linear + quadratic


def solve_delta(trace, m, n, tol):
    """
    Homogeneous filter parameter whose bound equals `tol`:

        delta = (sqrt(3Tr/m + 3 tol sqrt(nm + m^2)) - sqrt(3Tr/m)) / sqrt(m + n)

    The numerator is evaluated as a difference of squares over their sum so
    small tolerances keep full precision.
    """
    if m < 1 or n < 1:
        raise ContractViolation(f"m and n must be >= 1, got m={m}, n={n}")
    if tol < 0 or trace < 0 or math.isnan(tol) or math.isnan(trace):
        raise ContractViolation(f"tolerance and trace must be >= 0, got tol={tol}, trace={trace}")
    if tol == 0.0:
        return 0.0
    if math.isinf(tol):
        return math.inf

    base = 3.0 * trace / m
    lifted = 3.0 * tol * math.sqrt(n * m + m * m)
    numerator = lifted / (math.sqrt(base + lifted) + math.sqrt(base))
    return numerator / math.sqrt(m + n)


def normalized_tol(tol, spectrum):
    """Tol_F / sqrt(sum(lambda_i^2) / n)"""
    values = spectrum.as_array()
    scale = math.sqrt(float(np.sum(values * values)) / values.size)
    if scale == 0.0:
        raise ZeroDivisionError("cannot normalize against an all-zero spectrum")
    return tol / scale


def eigen_perturb_rms(real_spec, pert_spec):
    """sqrt(mean((lambda_hat_i - lambda_i)^2)) with both spectra sorted alike"""
    if real_spec.n != pert_spec.n:
        raise ContractViolation(f"spectra differ in length: {real_spec.n} vs {pert_spec.n}")
    diff = pert_spec.as_array() - real_spec.as_array()
    return math.sqrt(float(np.mean(diff * diff)))


def triangle_chain(data, noise):
    """
    The three terms bounding ||Delta||_F for Y_hat = Y + W:
    (||Y^T W||_F, ||W^T Y||_F, ||W^T W||_F), each scaled by 1/m.
    """
    data = as_data_matrix(data)
    noise = np.asarray(noise, dtype=np.float64).reshape(data.shape)
    m = data.shape[0]
    cross = data.T @ noise
    return (frobenius_norm(cross) / m, frobenius_norm(cross.T) / m,
            frobenius_norm(noise.T @ noise) / m)


def uniform_noise(rng, shape, delta):
    """Filtering error W with entries i.i.d. Uniform[-delta, delta]"""
    return rng.uniform(-delta, delta, size=shape)
