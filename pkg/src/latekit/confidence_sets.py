"""Wald intervals and Fieller/Anderson-Rubin style confidence sets.

The ratio-inversion set is {t : (b_y - t*b_w)^2 <= crit^2 * q(t)} for a
quadratic variance form q; collecting terms gives A*t^2 + B*t + C <= 0
whose sign pattern yields an interval, one or two rays, the whole line,
or (as a roundoff guard) a single point. Whenever the first-stage estimate
is nonzero the ratio point estimate belongs to the set, so a truly empty
solution is impossible.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .data_model import AnalysisConfig
from .estimation import (
    Estimates,
    VarianceComponents,
    combined_variance,
    r2_of_tau,
    r2_star,
)
from .exceptions import NoIdentificationError
from .mixture import MixtureParams, lambda_quantile, normal_quantile
from .stats_core import SandwichCov

_INF = math.inf


@dataclass(frozen=True)
class ConfidenceSet:
    """Tagged confidence-set geometry with extended-real length.

    ``kind`` is one of interval, point, left_ray, right_ray, two_rays,
    whole_line. Rays are closed at their finite endpoint; ``two_rays`` is
    (-inf, hi_left] united with [lo_right, inf).
    """

    kind: str
    lo: float = -_INF
    hi: float = _INF
    hi_left: float | None = None
    lo_right: float | None = None
    method: str = ""
    contains_wald: bool | None = None
    degenerate: bool = False

    @staticmethod
    def interval(lo: float, hi: float, **kw) -> "ConfidenceSet":
        if lo > hi:
            lo, hi = hi, lo
        return ConfidenceSet(kind="interval", lo=lo, hi=hi, **kw)

    @staticmethod
    def point(v: float, **kw) -> "ConfidenceSet":
        return ConfidenceSet(kind="point", lo=v, hi=v, **kw)

    @staticmethod
    def left_ray(hi: float, **kw) -> "ConfidenceSet":
        return ConfidenceSet(kind="left_ray", hi=hi, **kw)

    @staticmethod
    def right_ray(lo: float, **kw) -> "ConfidenceSet":
        return ConfidenceSet(kind="right_ray", lo=lo, **kw)

    @staticmethod
    def two_rays(hi_left: float, lo_right: float, **kw) -> "ConfidenceSet":
        if not hi_left < lo_right:
            raise ValueError("two rays must be disjoint")
        return ConfidenceSet(kind="two_rays", hi_left=hi_left, lo_right=lo_right, **kw)

    @staticmethod
    def whole_line(**kw) -> "ConfidenceSet":
        return ConfidenceSet(kind="whole_line", **kw)

    @property
    def length(self) -> float:
        if self.kind == "interval":
            return self.hi - self.lo
        if self.kind == "point":
            return 0.0
        return _INF

    def contains(self, value: float) -> bool:
        if self.kind == "interval":
            return self.lo <= value <= self.hi
        if self.kind == "point":
            return value == self.lo
        if self.kind == "left_ray":
            return value <= self.hi
        if self.kind == "right_ray":
            return value >= self.lo
        if self.kind == "two_rays":
            return value <= self.hi_left or value >= self.lo_right
        return True  # whole_line

    def to_json_dict(self) -> dict:
        def enc(v):
            if v is None:
                return None
            if math.isinf(v):
                return "inf" if v > 0 else "-inf"
            return v

        out = {"type": self.kind, "lo": enc(self.lo), "hi": enc(self.hi),
               "length": enc(self.length)}
        if self.kind == "two_rays":
            out["hi_left"] = enc(self.hi_left)
            out["lo_right"] = enc(self.lo_right)
        if self.method:
            out["method"] = self.method
        return out

    @staticmethod
    def from_json_dict(d: dict) -> "ConfidenceSet":
        def dec(v):
            if v == "inf":
                return _INF
            if v == "-inf":
                return -_INF
            return v

        return ConfidenceSet(kind=d["type"], lo=dec(d.get("lo", -_INF)),
                             hi=dec(d.get("hi", _INF)),
                             hi_left=dec(d.get("hi_left")),
                             lo_right=dec(d.get("lo_right")),
                             method=d.get("method", ""))

    def with_flags(self, **kw) -> "ConfidenceSet":
        return dataclasses.replace(self, **kw)


def solve_quadratic_set(b_y: float, b_w: float, crit: float,
                        q_y: float, q_c: float, q_w: float,
                        method: str = "") -> ConfidenceSet:
    """Invert (b_y - t*b_w)^2 <= crit^2 * (q_y - 2t*q_c + t^2*q_w) over t."""
    crit2 = crit * crit
    a = b_w * b_w - crit2 * q_w
    b = -2.0 * (b_y * b_w - crit2 * q_c)
    c = b_y * b_y - crit2 * q_y
    tol_a = 1e-12 * max(b_w * b_w, abs(crit2 * q_w))
    if a > tol_a:
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            lo, hi = _stable_roots(a, b, c, disc)
            return ConfidenceSet.interval(lo, hi, method=method)
        if b_w != 0.0:
            # a nonnegative variance form makes disc >= 0 whenever the ratio
            # point exists; landing here is roundoff (or a degenerate
            # rerandomization family), absorbed as the ratio point itself
            return ConfidenceSet.point(b_y / b_w, method=method, degenerate=True)
        raise NoIdentificationError("empty confidence inversion with zero first stage")
    if a < -tol_a:
        disc = b * b - 4.0 * a * c
        if disc > 0.0:
            lo, hi = _stable_roots(a, b, c, disc)
            return ConfidenceSet.two_rays(lo, hi, method=method)
        return ConfidenceSet.whole_line(method=method)
    # |a| within tolerance: linear classification b*t + c <= 0
    tol_b = 1e-12 * 2.0 * max(abs(b_y * b_w), abs(crit2 * q_c))
    if abs(b) > tol_b and b != 0.0:
        bound = -c / b
        if b > 0:
            return ConfidenceSet.left_ray(bound, method=method)
        return ConfidenceSet.right_ray(bound, method=method)
    tol_c = 1e-12 * max(b_y * b_y, abs(crit2 * q_y))
    if c <= tol_c:
        return ConfidenceSet.whole_line(method=method)
    if b_w == 0.0:
        raise NoIdentificationError("empty confidence inversion with zero first stage")
    return ConfidenceSet.point(b_y / b_w, method=method, degenerate=True)


def _stable_roots(a: float, b: float, c: float, disc: float) -> tuple[float, float]:
    sq = math.sqrt(disc)
    if b == 0.0:
        r = sq / (2.0 * abs(a))
        return (-r, r)
    q = -(b + math.copysign(sq, b)) / 2.0
    r1 = q / a
    r2 = c / q if q != 0.0 else -b / a - r1
    return (r1, r2) if r1 <= r2 else (r2, r1)


def fieller_endpoints(b_y: float, b_w: float, crit: float,
                      q_y: float, q_c: float, q_w: float) -> tuple[float, float]:
    """Closed-form interval endpoints for the ratio inversion when g < 1,
    where g = crit^2 * q_w / b_w^2 measures first-stage weakness."""
    if b_w == 0.0:
        raise ValueError("g is undefined with a zero first stage")
    crit2 = crit * crit
    g = crit2 * q_w / (b_w * b_w)
    if g >= 1.0:
        raise ValueError(f"g = {g:.6g} >= 1: the set is not a finite interval")
    tau = b_y / b_w
    center = tau - crit2 * q_c / (b_w * b_w)
    inner = (q_y + tau * tau * q_w - 2.0 * tau * q_c
             - crit2 * (q_y * q_w - q_c * q_c) / (b_w * b_w))
    if inner < 0.0:
        raise ArithmeticError("negative radicand: variance form is not nonnegative")
    radius = crit * math.sqrt(inner) / abs(b_w)
    lo = (center - radius) / (1.0 - g)
    hi = (center + radius) / (1.0 - g)
    return (lo, hi) if lo <= hi else (hi, lo)


def _rem_params(components: VarianceComponents, config: AnalysisConfig,
                tail: float) -> MixtureParams:
    return MixtureParams(k=components.k, a=config.design.a, alpha=tail)


def wald_ci(regime: str, estimates: Estimates, components, config: AnalysisConfig
            ) -> ConfidenceSet:
    """Ratio point estimate plus/minus a critical value times the delta-method
    standard error of the chosen regime's variance family.

    A zero first-stage estimate yields the whole line (the infinite-interval
    signal) rather than an error.
    """
    est = estimates.wald("adjusted" if regime == "adjusted" else "plain")
    method = f"wald[{regime}]"
    if not est.defined:
        return ConfidenceSet.whole_line(method=method, degenerate=True)
    tau = est.tau_hat
    if regime == "cre":
        crit = normal_quantile(1.0 - config.alpha / 2.0)
        vhat = combined_variance(components, tau, "plain")
    elif regime == "rem":
        rho = r2_of_tau(components, tau)
        crit = lambda_quantile(_rem_params(components, config, config.alpha / 2.0),
                               rho.value)
        vhat = combined_variance(components, tau, "rem")
    elif regime == "adjusted":
        crit = normal_quantile(1.0 - config.alpha / 2.0)
        vhat = combined_variance(components, tau, "sandwich")
    else:
        raise ValueError(f"unknown regime: {regime!r}")
    radius = crit * math.sqrt(vhat.value) / abs(est.tau_w_hat)
    ci = ConfidenceSet.interval(tau - radius, tau + radius, method=method,
                                degenerate=vhat.floored)
    return ci.with_flags(contains_wald=ci.contains(tau))


def far_set(regime: str, estimates: Estimates, components, config: AnalysisConfig
            ) -> ConfidenceSet:
    """Weak-instrument-robust confidence set by quadratic inversion.

    The critical value is the normal quantile except in the unadjusted
    rerandomized regime, where the mixture quantile at the minimized
    squared correlation applies.
    """
    b_y, b_w = estimates.tau_y, estimates.tau_w
    method = f"far[{regime}]"
    if regime == "cre":
        crit = normal_quantile(1.0 - config.alpha / 2.0)
        q_y, q_c, q_w = components.family("plain")
    elif regime == "rem":
        rho = r2_star(components)
        crit = lambda_quantile(_rem_params(components, config, config.alpha / 2.0),
                               rho.value)
        q_y, q_c, q_w = components.family("rem")
    elif regime == "adjusted":
        crit = normal_quantile(1.0 - config.alpha / 2.0)
        if not isinstance(components, SandwichCov):
            raise TypeError("adjusted regime needs a SandwichCov")
        q_y, q_c, q_w = components.as_triple()
    else:
        raise ValueError(f"unknown regime: {regime!r}")
    cs = solve_quadratic_set(b_y, b_w, crit, q_y, q_c, q_w, method=method)
    if b_w != 0.0:
        cs = cs.with_flags(contains_wald=cs.contains(b_y / b_w))
    return cs
