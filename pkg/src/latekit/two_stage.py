"""First-stage strength tests and the composite two-stage confidence sets.

The first stage tests whether the receipt rate gap exceeds a small
threshold; a rejection (strict inequality) selects the Wald interval,
otherwise the robust quadratic-inversion set is reported. The F-screen
comparators replicate the common practice of trusting the Wald interval
only when the first-stage F statistic exceeds 10.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .confidence_sets import ConfidenceSet, far_set, wald_ci
from .data_model import AnalysisConfig, Dataset
from .estimation import Estimates, variance_components
from .mixture import MixtureParams, lambda_quantile, normal_quantile
from .stats_core import SandwichCov, fit_interacted_pair, sandwich_cov, summarize

F_THRESHOLD = 10.0


@dataclass(frozen=True)
class FirstStageResult:
    statistic: float
    critical: float
    strong: bool
    statistic_kind: str
    degenerate: bool = False


@dataclass(frozen=True)
class TwoStageOutput:
    first_stage: FirstStageResult
    set: ConfidenceSet
    branch: str  # "wald" or "far"

    def to_json_dict(self) -> dict:
        fs = self.first_stage
        return {
            "branch": self.branch,
            "statistic": None if math.isnan(fs.statistic) else fs.statistic,
            "statistic_kind": fs.statistic_kind,
            "critical": fs.critical,
            "strong": fs.strong,
            "set": self.set.to_json_dict(),
        }


def first_stage_test(regime: str, estimates: Estimates, components,
                     config: AnalysisConfig) -> FirstStageResult:
    """Test whether the first stage clears the strength threshold.

    A nonpositive variance estimate cannot be standardized; the instrument
    is then conservatively declared weak.
    """
    if regime == "cre":
        var, kind = components.family("plain")[2], "t"
        crit = normal_quantile(1.0 - config.gamma)
    elif regime == "rem":
        var, kind = components.family("rem")[2], "t_rem"
        rho = 0.0
        if var > 0 and components.v_w_proj is not None:
            rho = min(max(components.v_w_proj / var, 0.0), 1.0)
        crit = lambda_quantile(
            MixtureParams(k=components.k, a=config.design.a, alpha=config.gamma), rho)
    elif regime == "adjusted":
        if not isinstance(components, SandwichCov):
            raise TypeError("adjusted regime needs a SandwichCov")
        var, kind = components.v_w, "t_adj"
        crit = normal_quantile(1.0 - config.gamma)
    else:
        raise ValueError(f"unknown regime: {regime!r}")
    if var <= 0.0:
        return FirstStageResult(statistic=math.nan, critical=crit, strong=False,
                                statistic_kind=kind, degenerate=True)
    stat = (estimates.tau_w - config.p_plus) / math.sqrt(var)
    return FirstStageResult(statistic=stat, critical=crit, strong=stat > crit,
                            statistic_kind=kind)


def f_screen(regime: str, estimates: Estimates, components) -> FirstStageResult:
    """Squared first-stage t-ratio against the conventional threshold of 10."""
    if regime == "adjusted":
        if not isinstance(components, SandwichCov):
            raise TypeError("adjusted regime needs a SandwichCov")
        var = components.v_w
    else:
        var = components.family("plain")[2]
    if var <= 0.0:
        return FirstStageResult(statistic=math.nan, critical=F_THRESHOLD,
                                strong=False, statistic_kind="f", degenerate=True)
    stat = estimates.tau_w ** 2 / var
    return FirstStageResult(statistic=stat, critical=F_THRESHOLD,
                            strong=stat > F_THRESHOLD, statistic_kind="f")


def two_stage_set(regime: str, dataset: Dataset, z: np.ndarray,
                  config: AnalysisConfig) -> TwoStageOutput:
    """Run the complete two-stage procedure on observed data.

    Strong first stage: the regime's Wald interval. Weak (including ties):
    the regime's robust set.
    """
    if regime == "adjusted":
        fit_y, fit_w = fit_interacted_pair(dataset, z)
        estimates = Estimates(fit_y.tau_hat, fit_w.tau_hat)
        components = sandwich_cov(fit_y, fit_w, config.adjustment)
    else:
        summary = summarize(dataset, z)
        estimates = Estimates(summary.tau_y, summary.tau_w)
        components = variance_components(summary)
    fs = first_stage_test(regime, estimates, components, config)
    if fs.strong:
        return TwoStageOutput(first_stage=fs,
                              set=wald_ci(regime, estimates, components, config),
                              branch="wald")
    return TwoStageOutput(first_stage=fs,
                          set=far_set(regime, estimates, components, config),
                          branch="far")
