"""Deterministic statistical kernels: arm moments, interacted OLS, sandwiches.

Conventions follow finite-population randomization inference throughout:
within-arm sample moments use divisor n_z - 1, full-sample covariate
matrices use n - 1, and the interacted regression includes assignment,
covariates, and their products.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .data_model import Dataset
from .exceptions import (
    DegenerateCovariatesError,
    LeverageOnePointError,
    RankDeficientDesignError,
)

_RCOND_MIN = 1e-12
_RANK_TOL = 1e-10


def _spd_inverse(mat: np.ndarray, what: str) -> np.ndarray:
    eig = np.linalg.eigvalsh(mat)
    if eig[0] <= 0 or eig[0] / eig[-1] < _RCOND_MIN:
        raise DegenerateCovariatesError(f"{what} is numerically singular")
    chol = np.linalg.cholesky(mat)
    inv_chol = np.linalg.inv(chol)
    return inv_chol.T @ inv_chol


class ArmMoments:
    """Means, variances, and covariate covariances within one arm."""

    def __init__(self, q_y: np.ndarray, q_w: np.ndarray, x: np.ndarray):
        nz = len(q_y)
        if nz < 2:
            raise ValueError("each arm needs at least 2 units")
        self.nz = nz
        self.y_mean = float(q_y.mean())
        self.w_mean = float(q_w.mean())
        yc = q_y - self.y_mean
        wc = q_w - self.w_mean
        xc = x - x.mean(axis=0)
        d = nz - 1
        self.s2_y = float(yc @ yc) / d
        self.s2_w = float(wc @ wc) / d
        self.s_yw = float(yc @ wc) / d
        self.s_yx = xc.T @ yc / d
        self.s_wx = xc.T @ wc / d
        self.sxx = xc.T @ xc / d

    @cached_property
    def sxx_inv(self) -> np.ndarray:
        return _spd_inverse(self.sxx, "within-arm covariate covariance")

    @cached_property
    def s2_y_proj(self) -> float:
        return float(self.s_yx @ self.sxx_inv @ self.s_yx)

    @cached_property
    def s2_w_proj(self) -> float:
        return float(self.s_wx @ self.sxx_inv @ self.s_wx)

    @cached_property
    def s_yw_proj(self) -> float:
        return float(self.s_yx @ self.sxx_inv @ self.s_wx)


class MomentSummary:
    """All arm-wise moments an analysis needs, computed once per assignment.

    Projection quantities (variances of fitted linear projections on the
    covariates) are evaluated lazily so covariate-free analyses never touch
    a covariate matrix.
    """

    def __init__(self, dataset: Dataset, z: np.ndarray):
        z = np.asarray(z, dtype=np.int64)
        self.n = dataset.n
        self.k = dataset.k
        treated = z == 1
        self.arm1 = ArmMoments(dataset.y[treated], dataset.w[treated], dataset.x[treated])
        self.arm0 = ArmMoments(dataset.y[~treated], dataset.w[~treated], dataset.x[~treated])
        self.n1 = self.arm1.nz
        self.n0 = self.arm0.nz
        xc = dataset.x - dataset.x.mean(axis=0)
        self.sxx_full = xc.T @ xc / (self.n - 1)

    @cached_property
    def sxx_full_inv(self) -> np.ndarray:
        return _spd_inverse(self.sxx_full, "covariate covariance")

    @property
    def tau_y(self) -> float:
        return self.arm1.y_mean - self.arm0.y_mean

    @property
    def tau_w(self) -> float:
        return self.arm1.w_mean - self.arm0.w_mean


def summarize(dataset: Dataset, z: np.ndarray) -> MomentSummary:
    """Compute every arm-wise moment for the given assignment."""
    return MomentSummary(dataset, z)


def diff_in_means(dataset: Dataset, z: np.ndarray, q: np.ndarray) -> float:
    """Treated-minus-control mean of a column."""
    z = np.asarray(z)
    q = np.asarray(q, dtype=float)
    if not (z == 1).any() or not (z == 0).any():
        raise ValueError("both arms must be nonempty")
    return float(q[z == 1].mean() - q[z == 0].mean())


@dataclass
class InteractedOlsFit:
    """Least-squares fit of an outcome on assignment, covariates, and their
    interactions, with the pieces robust variances need.

    Columns are ordered [intercept, assignment, covariates, interactions];
    ``tau_hat`` is the assignment coefficient.
    """

    coef: np.ndarray
    residuals: np.ndarray
    hat_diag: np.ndarray
    gram_inv: np.ndarray
    design: np.ndarray = field(repr=False)
    k: int = 0

    @property
    def tau_hat(self) -> float:
        return float(self.coef[1])


def _interacted_design(dataset: Dataset, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    cols = [np.ones(dataset.n), z]
    if dataset.k:
        cols.append(dataset.x)
        cols.append(z[:, None] * dataset.x)
    return np.column_stack(cols)


class _QrContext:
    """Equilibrated QR of one interacted design, reused across outcomes."""

    def __init__(self, dataset: Dataset, z: np.ndarray):
        omega = _interacted_design(dataset, z)
        n, p = omega.shape
        if n <= p:
            raise RankDeficientDesignError(f"need n > {p} rows for {p} columns; got {n}")
        norms = np.linalg.norm(omega, axis=0)
        if np.any(norms == 0):
            bad = int(np.argmax(norms == 0))
            raise RankDeficientDesignError(f"design column {bad} is identically zero")
        q_mat, r_mat = np.linalg.qr(omega / norms)
        diag = np.abs(np.diag(r_mat))
        if diag.min() < _RANK_TOL * diag.max():
            bad = int(np.argmin(diag))
            raise RankDeficientDesignError(
                f"design is rank deficient (column {bad} collinear with earlier columns)"
            )
        self.omega = omega
        self.norms = norms
        self.q_mat = q_mat
        self.r_mat = r_mat
        self.hat_diag = np.einsum("ij,ij->i", q_mat, q_mat)
        r_inv = np.linalg.solve(r_mat, np.eye(p))
        self.gram_inv = (r_inv @ r_inv.T) / np.outer(norms, norms)
        self.k = dataset.k

    def fit(self, q: np.ndarray) -> InteractedOlsFit:
        q = np.asarray(q, dtype=float)
        coef = np.linalg.solve(self.r_mat, self.q_mat.T @ q) / self.norms
        residuals = q - self.omega @ coef
        return InteractedOlsFit(coef=coef, residuals=residuals,
                                hat_diag=self.hat_diag, gram_inv=self.gram_inv,
                                design=self.omega, k=self.k)


def fit_interacted(dataset: Dataset, z: np.ndarray, q: np.ndarray) -> InteractedOlsFit:
    """Fit the interacted regression by column-equilibrated QR.

    Raises on rank deficiency, identifying the offending column.
    """
    return _QrContext(dataset, z).fit(q)


def fit_interacted_pair(dataset: Dataset, z: np.ndarray
                        ) -> tuple[InteractedOlsFit, InteractedOlsFit]:
    """Fit outcome and receipt on one shared design (single factorization)."""
    ctx = _QrContext(dataset, z)
    return ctx.fit(dataset.y), ctx.fit(dataset.w)


@dataclass(frozen=True)
class SandwichCov:
    """Robust (co)variances of the assignment coefficients for a pair of
    outcomes sharing one interacted design."""

    v_y: float
    c_yw: float
    v_w: float
    flavor: str

    def as_triple(self) -> tuple[float, float, float]:
        return self.v_y, self.c_yw, self.v_w


_FLAVOR_EXPONENT = {"ehw": 0, "hc2": 1, "hc3": 2}


def sandwich_cov(fit_y: InteractedOlsFit, fit_w: InteractedOlsFit,
                 flavor: str = "ehw") -> SandwichCov:
    """Heteroskedasticity-robust sandwich for the assignment coefficient.

    The weight on each squared (or crossed) residual is (1 - h_i)^-(j-1)
    with j = 1, 2, 3 for EHW, HC2, HC3; the cross term pairs the two fits'
    residuals over the shared design.
    """
    if fit_y.design is not fit_w.design and not np.array_equal(fit_y.design, fit_w.design):
        raise ValueError("fits must share one design matrix")
    flavor = flavor.lower()
    if flavor not in _FLAVOR_EXPONENT:
        raise ValueError(f"unknown sandwich flavor: {flavor!r}")
    expo = _FLAVOR_EXPONENT[flavor]
    h = fit_y.hat_diag
    if expo and np.any(h >= 1.0 - 1e-12):
        raise LeverageOnePointError("leverage-one point: HC2/HC3 weights undefined")
    weights = np.ones_like(h) if expo == 0 else (1.0 - h) ** (-expo)
    # row of (Omega'Omega)^-1 Omega' belonging to the assignment coefficient
    bz = fit_y.gram_inv[1] @ fit_y.design.T
    wy = fit_y.residuals * bz
    ww = fit_w.residuals * bz
    v_y = float(np.sum(weights * wy * wy))
    v_w = float(np.sum(weights * ww * ww))
    c_yw = float(np.sum(weights * wy * ww))
    return SandwichCov(v_y=v_y, c_yw=c_yw, v_w=v_w, flavor=flavor)
