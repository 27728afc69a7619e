from dadkit.diagnostics.chart import ChartRow, chart_data, read_chart_csv, write_chart_csv
from dadkit.diagnostics.distributions import (
    EmpiricalDistribution,
    GaussianStats,
    LossKind,
    RiskModel,
    linear_classifier,
    mixture,
)
from dadkit.diagnostics.lemmas import (
    empirical_risk,
    expected_risk,
    generalization_term,
    lemma31_check,
    lemma31_w_slack,
    lemma33_check,
    lemma34_check,
    mixture_augmentation,
    worst_case_risk,
)
from dadkit.diagnostics.stats import bn_stats
from dadkit.diagnostics.transport import GroundMetric, ground_cost_matrix, tv_distance, wasserstein_gaussian, wasserstein_lp

__all__ = [
    "ChartRow",
    "EmpiricalDistribution",
    "GaussianStats",
    "GroundMetric",
    "LossKind",
    "RiskModel",
    "bn_stats",
    "chart_data",
    "empirical_risk",
    "expected_risk",
    "generalization_term",
    "ground_cost_matrix",
    "lemma31_check",
    "lemma31_w_slack",
    "lemma33_check",
    "lemma34_check",
    "linear_classifier",
    "mixture",
    "mixture_augmentation",
    "read_chart_csv",
    "tv_distance",
    "wasserstein_gaussian",
    "wasserstein_lp",
    "worst_case_risk",
    "write_chart_csv",
]
