"""Assignment generation under complete randomization and rerandomization."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_model import Dataset, DesignSpec
from .exceptions import AcceptanceRegionError, DegenerateCovariatesError
from .mixture import threshold_from_pa

__all__ = ["AssignmentVector", "draw_assignment", "mahalanobis", "threshold_from_pa"]

REJECTION_CAP = 1_000_000
_RCOND_MIN = 1e-12


@dataclass(frozen=True)
class AssignmentVector:
    """One accepted assignment plus how many rejection draws it took."""

    z: np.ndarray
    accepted_after: int


def _sxx_and_factor(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Finite-population covariate covariance (divisor n-1) and its Cholesky
    factor, rejecting numerically singular matrices."""
    n, k = x.shape
    if k < 1:
        raise DegenerateCovariatesError("balance criterion needs at least one covariate")
    xc = x - x.mean(axis=0)
    sxx = xc.T @ xc / (n - 1)
    eig = np.linalg.eigvalsh(sxx)
    if eig[0] <= 0 or eig[0] / eig[-1] < _RCOND_MIN:
        raise DegenerateCovariatesError(
            f"degenerate covariates: reciprocal condition {max(eig[0], 0.0) / eig[-1]:.2e}"
        )
    return sxx, np.linalg.cholesky(sxx)


def _mahalanobis_from_factor(x: np.ndarray, z: np.ndarray, chol: np.ndarray) -> float:
    n = len(z)
    n1 = int(z.sum())
    n0 = n - n1
    diff = x[z == 1].mean(axis=0) - x[z == 0].mean(axis=0)
    w = np.linalg.solve(chol, diff)
    return float(n1 * n0 / n * (w @ w))


def mahalanobis(x: np.ndarray, z: np.ndarray) -> float:
    """Mahalanobis imbalance of an assignment: the arm-mean covariate gap
    scaled by the inverse covariate covariance and the arm sizes."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z)
    _, chol = _sxx_and_factor(x)
    return _mahalanobis_from_factor(x, z, chol)


def draw_assignment(design: DesignSpec, dataset,
                    rng: np.random.Generator) -> AssignmentVector:
    """Draw an assignment: one uniform split for CRE, rejection sampling
    against the Mahalanobis threshold for ReM.

    ``dataset`` may be a Dataset or a bare covariate matrix. The injected
    generator is the only source of randomness, so results are reproducible
    from (seed, call order).
    """
    x = dataset.x if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=float)
    n = len(x)
    n1 = design.n1
    if not 0 < n1 < n:
        raise ValueError(f"n1 must be in (0, n); got {n1} with n={n}")

    if design.kind == "cre" or math.isinf(design.a):
        z = np.zeros(n, dtype=np.int64)
        z[rng.permutation(n)[:n1]] = 1
        return AssignmentVector(z=z, accepted_after=1)

    _, chol = _sxx_and_factor(x)
    n0 = n - n1
    coeff = n1 * n0 / n
    col_sums = x.sum(axis=0)
    # candidates are evaluated in vectorized batches; the n1 smallest of n
    # iid uniform keys is a uniform random treated subset, so the accepted
    # draw has exactly the law of one-at-a-time rejection sampling
    cap = REJECTION_CAP
    batch = 128
    attempts = 0
    while attempts < cap:
        b = min(batch, cap - attempts)
        keys = rng.random((b, n))
        treated = np.argpartition(keys, n1 - 1, axis=1)[:, :n1]
        s1 = x[treated].sum(axis=1)
        diff = s1 / n1 - (col_sums - s1) / n0
        w = np.linalg.solve(chol, diff.T)
        m_vals = coeff * np.einsum("ij,ij->j", w, w)
        hits = np.nonzero(m_vals <= design.a)[0]
        if hits.size:
            j = int(hits[0])
            z = np.zeros(n, dtype=np.int64)
            z[treated[j]] = 1
            return AssignmentVector(z=z, accepted_after=attempts + j + 1)
        attempts += b
    raise AcceptanceRegionError(
        f"acceptance region too small: no draw accepted in {cap} attempts "
        f"(observed acceptance rate < {1.0 / cap:.1e})",
        observed_rate=0.0,
    )
