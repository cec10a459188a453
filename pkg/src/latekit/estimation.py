"""Point estimators and the variance/correlation functionals built on moments.

Three quadratic families appear, each a function q(t) = v_y - 2t*c + t^2*v_w
of a candidate ratio t:

* the plain family, sums of within-arm variances over arm sizes;
* the rerandomization family, which subtracts the across-arm projection
  correction and is pointwise no larger than the plain family;
* the projection family, variances of fitted linear projections, whose
  ratio to the rerandomization family is the squared correlation fed to
  the mixture quantile.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .stats_core import MomentSummary


@dataclass(frozen=True)
class WaldEstimate:
    """Ratio estimate of the complier effect; undefined when the first-stage
    difference in means is exactly zero."""

    tau_hat: float
    tau_w_hat: float
    method: str = "plain"

    @property
    def defined(self) -> bool:
        return self.tau_w_hat != 0.0


def wald(tau_y_hat: float, tau_w_hat: float, method: str = "plain") -> WaldEstimate:
    """Ratio of the assignment effects on outcome and on receipt."""
    if tau_w_hat == 0.0:
        return WaldEstimate(tau_hat=math.nan, tau_w_hat=0.0, method=method)
    return WaldEstimate(tau_hat=tau_y_hat / tau_w_hat, tau_w_hat=tau_w_hat, method=method)


class Estimates(NamedTuple):
    """Difference-in-means (or regression-adjusted) effect estimates."""

    tau_y: float
    tau_w: float

    def wald(self, method: str = "plain") -> WaldEstimate:
        return wald(self.tau_y, self.tau_w, method=method)


@dataclass(frozen=True)
class VarianceComponents:
    """Every (co)variance entry the confidence procedures consume.

    The rerandomization and projection families are None when the dataset
    has no covariates.
    """

    v_y: float
    v_w: float
    c_yw: float
    k: int = 0
    v_y_rem: float | None = None
    v_w_rem: float | None = None
    c_yw_rem: float | None = None
    v_y_proj: float | None = None
    v_w_proj: float | None = None
    c_yw_proj: float | None = None

    def family(self, name: str) -> tuple[float, float, float]:
        """(v_y, c_yw, v_w) for 'plain' or 'rem'."""
        if name == "plain":
            return self.v_y, self.c_yw, self.v_w
        if name == "rem":
            if self.v_y_rem is None:
                raise ValueError("rerandomization family needs covariates")
            return self.v_y_rem, self.c_yw_rem, self.v_w_rem
        raise ValueError(f"unknown family: {name!r}")

    def proj_family(self) -> tuple[float, float, float]:
        if self.v_y_proj is None:
            raise ValueError("projection family needs covariates")
        return self.v_y_proj, self.c_yw_proj, self.v_w_proj


def variance_components(summary: MomentSummary) -> VarianceComponents:
    """Assemble the plain, rerandomization, and projection families."""
    a1, a0 = summary.arm1, summary.arm0
    n1, n0, n = summary.n1, summary.n0, summary.n
    v_y = a1.s2_y / n1 + a0.s2_y / n0
    v_w = a1.s2_w / n1 + a0.s2_w / n0
    c_yw = a1.s_yw / n1 + a0.s_yw / n0
    if summary.k == 0:
        return VarianceComponents(v_y=v_y, v_w=v_w, c_yw=c_yw)
    sxx_inv = summary.sxx_full_inv
    dy = a1.s_yx - a0.s_yx
    dw = a1.s_wx - a0.s_wx
    corr_yy = float(dy @ sxx_inv @ dy) / n
    corr_ww = float(dw @ sxx_inv @ dw) / n
    corr_yw = float(dy @ sxx_inv @ dw) / n
    return VarianceComponents(
        v_y=v_y, v_w=v_w, c_yw=c_yw, k=summary.k,
        v_y_rem=v_y - corr_yy,
        v_w_rem=v_w - corr_ww,
        c_yw_rem=c_yw - corr_yw,
        v_y_proj=a1.s2_y_proj / n1 + a0.s2_y_proj / n0 - corr_yy,
        v_w_proj=a1.s2_w_proj / n1 + a0.s2_w_proj / n0 - corr_ww,
        c_yw_proj=a1.s_yw_proj / n1 + a0.s_yw_proj / n0 - corr_yw,
    )


def _quad(triple: tuple[float, float, float], tau: float) -> float:
    v_y, c, v_w = triple
    return v_y - 2.0 * tau * c + tau * tau * v_w


class R2Value(NamedTuple):
    value: float
    degenerate: bool = False


def r2_of_tau(components: VarianceComponents, tau: float) -> R2Value:
    """Squared correlation between the effect estimate and covariate
    imbalance, evaluated at a candidate ratio and clipped to [0, 1].

    A nonpositive denominator marks the variance estimate degenerate; the
    conservative value 0 is returned (the mixture quantile is largest
    there).
    """
    num = _quad(components.proj_family(), tau)
    den = _quad(components.family("rem"), tau)
    if den <= 0.0:
        return R2Value(0.0, degenerate=True)
    return R2Value(min(max(num / den, 0.0), 1.0))


def _real_roots(coeffs: list[float], scale: float) -> list[float]:
    """Real roots of a polynomial of degree <= 3, highest power first.

    Leading coefficients below 1e-12 * scale are dropped (degree fallback);
    roots get two Newton polish steps.
    """
    tol = 1e-12 * max(scale, 1e-300)
    c = list(coeffs)
    while len(c) > 1 and abs(c[0]) <= tol:
        c = c[1:]
    deg = len(c) - 1
    if deg <= 0:
        return []
    if deg == 1:
        roots = [-c[1] / c[0]]
    elif deg == 2:
        a, b, cc = c
        disc = b * b - 4.0 * a * cc
        if disc < 0:
            return []
        sq = math.sqrt(disc)
        q = -(b + math.copysign(sq, b)) / 2.0
        roots = [q / a]
        if q != 0.0:
            roots.append(cc / q)
        elif disc > 0:
            roots.append(-b / a - roots[0])
    else:
        a, b, cc, d = c
        # depressed cubic t^3 + pt + q with x = t - b/(3a)
        p = (3.0 * a * cc - b * b) / (3.0 * a * a)
        q = (2.0 * b ** 3 - 9.0 * a * b * cc + 27.0 * a * a * d) / (27.0 * a ** 3)
        shift = -b / (3.0 * a)
        disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
        if disc > 0:
            s = math.sqrt(disc)
            u = math.copysign(abs(-q / 2.0 + s) ** (1.0 / 3.0), -q / 2.0 + s)
            v = math.copysign(abs(-q / 2.0 - s) ** (1.0 / 3.0), -q / 2.0 - s)
            roots = [u + v + shift]
        elif p == 0.0 and q == 0.0:
            roots = [shift]
        else:
            r = math.sqrt(-p ** 3 / 27.0)
            phi = math.acos(min(max(-q / (2.0 * r), -1.0), 1.0))
            m = 2.0 * math.sqrt(-p / 3.0)
            roots = [m * math.cos((phi + 2.0 * math.pi * j) / 3.0) + shift for j in range(3)]

    def poly(x):
        return sum(ci * x ** (deg - i) for i, ci in enumerate(c))

    def dpoly(x):
        return sum((deg - i) * ci * x ** (deg - i - 1) for i, ci in enumerate(c[:-1]))

    polished = []
    for r in roots:
        for _ in range(2):
            d1 = dpoly(r)
            if d1 != 0.0 and math.isfinite(d1):
                step = poly(r) / d1
                if math.isfinite(step):
                    r -= step
        polished.append(r)
    return polished


def r2_star(components: VarianceComponents) -> R2Value:
    """Global minimum of r2_of_tau over the extended real line.

    Stationary points come from the derivative numerator of the quadratic
    ratio (a cubic whose leading coefficient in fact cancels); the limits
    at +-infinity contribute the ratio of the two leading coefficients.
    Roots of either quadratic are included so the clipped function's zeros
    are never missed.
    """
    p0, p1, p2 = components.proj_family()
    q0, q1, q2 = components.family("rem")
    if q2 <= 0.0:
        return R2Value(0.0, degenerate=True)
    scale = max(abs(v) for v in (p0, p1, p2, q0, q1, q2))
    if scale == 0.0:
        return R2Value(0.0)
    # a strictly negative denominator region pins the clipped ratio at zero;
    # a double root is removable and must not
    disc_q = q1 * q1 - q0 * q2
    if disc_q > 1e-12 * max(q1 * q1, abs(q0 * q2)):
        return R2Value(0.0, degenerate=True)
    # numerator of d/dt [(p0 - 2p1 t + p2 t^2)/(q0 - 2q1 t + q2 t^2)], expanded:
    # the t^3 terms cancel identically, leaving a quadratic.
    cubic = [0.0,
             2.0 * (p1 * q2 - p2 * q1),
             2.0 * (p2 * q0 - p0 * q2),
             2.0 * (p0 * q1 - p1 * q0)]
    candidates = _real_roots(cubic, scale * scale)
    candidates += _real_roots([p2, -2.0 * p1, p0], scale)
    best = min(max(p2 / q2, 0.0), 1.0)  # value at +-infinity
    for tau in candidates:
        if not math.isfinite(tau):
            continue
        r2 = r2_of_tau(components, tau)
        if r2.degenerate:
            continue  # isolated denominator zero, removable
        best = min(best, r2.value)
    return R2Value(best)


class VarianceAt(NamedTuple):
    value: float
    floored: bool = False


def combined_variance(components, tau_hat: float, family: str = "plain") -> VarianceAt:
    """Variance estimate for the outcome-minus-ratio-times-receipt contrast,
    the chosen family's quadratic evaluated at the ratio estimate.

    The rerandomization family is floored at zero (it can go negative in
    finite samples); the plain and sandwich families are nonnegative by
    construction, so anything beyond roundoff raises.

    ``components`` is a VarianceComponents for 'plain'/'rem' or a
    SandwichCov for 'sandwich'.
    """
    if not math.isfinite(tau_hat):
        raise ValueError("tau_hat must be finite")
    if family == "sandwich":
        triple = components.as_triple()
    else:
        triple = components.family(family)
    value = _quad(triple, tau_hat)
    if family == "rem":
        if value < 0.0:
            return VarianceAt(0.0, floored=True)
        return VarianceAt(value)
    scale = max(abs(t) for t in triple) * max(1.0, tau_hat * tau_hat)
    if value < -1e-9 * max(scale, 1e-300):
        raise ArithmeticError(f"{family} variance quadratic is negative: {value}")
    return VarianceAt(max(value, 0.0))
