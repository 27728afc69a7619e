"""
Exact distances between finite distributions.

The ground metric on (x, y) pairs is ``||x - x'||_2 + label_scale * [y != y']``.
``wasserstein_lp`` solves the transport linear program exactly with POT's
network simplex (``ot.emd2``).
"""
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
import ot
from scipy.spatial.distance import cdist

from dadkit.diagnostics.distributions import EmpiricalDistribution, GaussianStats

_MASS_TOL = 1e-9


def tv_distance(p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
    """Sum of |p_i - q_i| over the union of supports (2 for disjoint supports)."""
    a, b = p.masses(), q.masses()
    return float(sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b)))


def feature_diameter(*dists: EmpiricalDistribution) -> float:
    parts = [d.features for d in dists if len(d)]
    if not parts:
        return 0.0
    features = np.concatenate(parts)
    if features.shape[0] < 2:
        return 0.0
    return float(cdist(features, features).max())


@dataclass(frozen=True)
class GroundMetric:
    # None: the feature diameter of the two supports being compared.
    label_scale: float | None = None

    @classmethod
    def for_supports(cls, dists: Iterable[EmpiricalDistribution]) -> "GroundMetric":
        """One fixed label scale for every pair drawn from ``dists``, so distances stay comparable."""
        diameter = feature_diameter(*dists)
        return cls(label_scale=diameter if diameter > 0 else 1.0)

    def scale_for(self, p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
        if self.label_scale is not None:
            return self.label_scale
        diameter = feature_diameter(p, q)
        return diameter if diameter > 0 else 1.0


def ground_cost_matrix(
    p: EmpiricalDistribution, q: EmpiricalDistribution, metric: GroundMetric | None = None
) -> np.ndarray:
    if p.dim != q.dim:
        raise ValueError(f"Feature dimensions differ: {p.dim} vs {q.dim}")
    metric = metric or GroundMetric()
    cost = cdist(p.features, q.features)
    label_cost = (p.labels[:, None] != q.labels[None, :]).astype(np.float64)
    return cost + metric.scale_for(p, q) * label_cost


def wasserstein_lp(
    p: EmpiricalDistribution,
    q: EmpiricalDistribution,
    metric: GroundMetric | None = None,
    *,
    order: int = 1,
) -> float:
    """Exact W_order: (min over couplings of sum M_ij * d_ij ** order) ** (1 / order)."""
    if len(p) == 0 or len(q) == 0:
        raise ValueError("Wasserstein distance needs non-empty supports")
    if abs(p.probs.sum() - q.probs.sum()) > _MASS_TOL:
        raise ValueError(f"Unbalanced total mass: {p.probs.sum()!r} vs {q.probs.sum()!r}")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    cost = ground_cost_matrix(p, q, metric) ** order
    a = p.probs / p.probs.sum()
    b = q.probs / q.probs.sum()
    value = float(ot.emd2(a, b, cost, numItermax=1_000_000))
    return max(value, 0.0) ** (1.0 / order)


def wasserstein_gaussian(s1: GaussianStats, s2: GaussianStats) -> float:
    """
    Closed-form W2 between diagonal Gaussians, per layer
    sqrt(sum_c (mu1 - mu2)**2 + (sigma1 - sigma2)**2), averaged over layers.
    """
    if s1.layout() != s2.layout():
        raise ValueError(f"Layer layouts differ: {s1.layout()} vs {s2.layout()}")
    if not s1.layers:
        raise ValueError("No layers to compare")
    per_layer = []
    for (m1, v1), (m2, v2) in zip(s1.layers, s2.layers):
        d2 = np.sum((m1 - m2) ** 2) + np.sum((np.sqrt(v1) - np.sqrt(v2)) ** 2)
        per_layer.append(float(np.sqrt(d2)))
    return float(np.mean(per_layer))
