"""
Risk functionals and executable checks of the distribution-shift bounds.

Every check returns the quantities it compared so a runner can report slack,
not only a verdict.
"""
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from dadkit.diagnostics.distributions import EmpiricalDistribution, LossKind, RiskModel, mixture
from dadkit.diagnostics.transport import GroundMetric, tv_distance, wasserstein_lp

# Inequalities are checked against exact arithmetic up to float rounding.
_TOL = 1e-12
_LP_TOL = 1e-9


def empirical_risk(rm: RiskModel, p: EmpiricalDistribution) -> float:
    """sum_i p_i * loss(classifier(x_i), y_i)."""
    if len(p) == 0:
        raise ValueError("Empirical risk of an empty support is undefined")
    return float(np.dot(p.probs, rm.losses(p.features, p.labels)))


@dataclass(frozen=True)
class BallRisk:
    value: float
    feasible: int
    # True when no candidate lay in the ball and the risk of P itself was returned.
    fallback: bool


def _feasible(p, epsilon, candidates, metric) -> list[EmpiricalDistribution]:
    metric = metric or GroundMetric.for_supports([p, *candidates])
    return [c for c in candidates if wasserstein_lp(p, c, metric) <= epsilon + _LP_TOL]


def worst_case_risk(
    rm: RiskModel,
    p: EmpiricalDistribution,
    epsilon: float,
    candidates: Sequence[EmpiricalDistribution],
    metric: GroundMetric | None = None,
) -> BallRisk:
    """Largest risk among candidates within Wasserstein distance ``epsilon`` of P."""
    feasible = _feasible(p, epsilon, candidates, metric)
    if not feasible:
        return BallRisk(empirical_risk(rm, p), 0, True)
    return BallRisk(max(empirical_risk(rm, c) for c in feasible), len(feasible), False)


def expected_risk(
    rm: RiskModel,
    p: EmpiricalDistribution,
    epsilon: float,
    candidates: Sequence[EmpiricalDistribution],
    metric: GroundMetric | None = None,
) -> BallRisk:
    """Average-case companion of ``worst_case_risk``: mean risk over the feasible candidates."""
    feasible = _feasible(p, epsilon, candidates, metric)
    if not feasible:
        return BallRisk(empirical_risk(rm, p), 0, True)
    return BallRisk(sum(empirical_risk(rm, c) for c in feasible) / len(feasible), len(feasible), False)


def generalization_term(hypothesis_count: int, n: int, beta: float) -> float:
    """sqrt((log|H| + log(1/beta)) / 2n) for a finite hypothesis class."""
    if hypothesis_count < 1:
        raise ValueError(f"hypothesis_count must be >= 1, got {hypothesis_count}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 < beta <= 1:
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    return math.sqrt((math.log(hypothesis_count) + math.log(1 / beta)) / (2 * n))


# ---------------------------------------------------------------------------
# Bound checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShiftCheck:
    holds: bool
    slack: float


def _require_zero_one(rm: RiskModel) -> None:
    if LossKind(rm.loss) is not LossKind.ZERO_ONE:
        raise ValueError("This bound needs a loss bounded by 1; use the zero-one loss")


def lemma31_check(rm: RiskModel, p: EmpiricalDistribution, p_shift: EmpiricalDistribution) -> ShiftCheck:
    """r(P') <= r(P) + tv(P, P'); holds for every loss with values in [0, 1]."""
    _require_zero_one(rm)
    slack = empirical_risk(rm, p) + tv_distance(p, p_shift) - empirical_risk(rm, p_shift)
    return ShiftCheck(holds=slack >= -_TOL, slack=slack)


def lemma31_w_slack(
    rm: RiskModel,
    p: EmpiricalDistribution,
    p_shift: EmpiricalDistribution,
    metric: GroundMetric | None = None,
) -> float:
    """
    r(P) + w(P', P) - r(P'). Only a report: the Wasserstein form depends on
    smoothness constants that are never instantiated, so a negative value is
    not a failure.
    """
    return empirical_risk(rm, p) + wasserstein_lp(p_shift, p, metric) - empirical_risk(rm, p_shift)


@dataclass(frozen=True)
class AdversarialCheck:
    holds: bool
    p_star: EmpiricalDistribution
    adversarial_risk: float
    star_risk: float
    distance: float


def lemma33_check(
    rm: RiskModel,
    p: EmpiricalDistribution,
    perturbations: Sequence[np.ndarray],
    epsilon_b: float,
    metric: GroundMetric | None = None,
) -> AdversarialCheck:
    """
    ``perturbations[i]`` holds candidate feature vectors [m_i, d] for support
    point i, each within ``epsilon_b`` of it. P* moves every point to its
    loss-maximizing candidate; the check asserts that the adversarial risk
    equals r(P*) and that w(P, P*) <= epsilon_b.
    """
    if len(perturbations) != len(p):
        raise ValueError(f"Need one perturbation set per support point ({len(p)}), got {len(perturbations)}")
    chosen = np.empty_like(p.features)
    worst = np.empty(len(p))
    for i, candidates in enumerate(perturbations):
        candidates = np.asarray(candidates, dtype=np.float64).reshape(-1, p.dim)
        if candidates.shape[0] == 0:
            raise ValueError(f"Empty perturbation set for support point {i}")
        radius = np.linalg.norm(candidates - p.features[i], axis=1).max()
        if radius > epsilon_b + _LP_TOL:
            raise ValueError(f"Perturbation of point {i} has norm {radius} > epsilon_b={epsilon_b}")
        losses = rm.losses(candidates, np.full(candidates.shape[0], p.labels[i]))
        j = int(np.argmax(losses))
        chosen[i] = candidates[j]
        worst[i] = losses[j]

    adversarial = float(np.dot(p.probs, worst))
    p_star = p.pushforward(chosen)
    star = empirical_risk(rm, p_star)
    distance = wasserstein_lp(p, p_star, metric)
    holds = abs(adversarial - star) <= _TOL and distance <= epsilon_b + _LP_TOL
    return AdversarialCheck(holds, p_star, adversarial, star, distance)


Augmentation = Callable[[Sequence[EmpiricalDistribution]], EmpiricalDistribution]


def mixture_augmentation(weights: Sequence[float] | None = None) -> Augmentation:
    """A stand-in augmentation map: the (weighted) mixture of the training distributions."""

    def augment(dists: Sequence[EmpiricalDistribution]) -> EmpiricalDistribution:
        return mixture(dists, weights)

    return augment


@dataclass(frozen=True)
class TransferCheck:
    lhs: float
    rhs: float
    holds: bool


def lemma34_check(
    set1: Sequence[EmpiricalDistribution],
    set2: Sequence[EmpiricalDistribution],
    p_shift: EmpiricalDistribution,
    augment: Augmentation,
    metric: GroundMetric | None = None,
) -> TransferCheck:
    """
    |w(D(set1), P') - w(D(set2), P')| <= 2 * (sup_{P in set1} w(P, P') + sup_{P in set2} w(P, P')).
    The two sets must share at least one distribution.
    """
    if not any(a.same_as(b) for a in set1 for b in set2):
        raise ValueError("The two distribution sets must intersect")
    d1, d2 = augment(set1), augment(set2)
    metric = metric or GroundMetric.for_supports([*set1, *set2, d1, d2, p_shift])
    lhs = abs(wasserstein_lp(d1, p_shift, metric) - wasserstein_lp(d2, p_shift, metric))
    rhs = 2 * (
        max(wasserstein_lp(p, p_shift, metric) for p in set1)
        + max(wasserstein_lp(p, p_shift, metric) for p in set2)
    )
    return TransferCheck(lhs=lhs, rhs=rhs, holds=lhs <= rhs + _LP_TOL)
