"""Random toy instances for the bound checks, shared by the CLI and the test-suite."""
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from dadkit.diagnostics.distributions import EmpiricalDistribution, LossKind, RiskModel, linear_classifier
from dadkit.diagnostics.lemmas import (
    AdversarialCheck,
    ShiftCheck,
    TransferCheck,
    lemma31_check,
    lemma33_check,
    lemma34_check,
    mixture_augmentation,
)


def random_distribution(
    rng: np.random.Generator, n_points: int, dim: int = 2, num_classes: int = 3
) -> EmpiricalDistribution:
    features = rng.random((n_points, dim))
    labels = rng.integers(0, num_classes, n_points)
    return EmpiricalDistribution(features, labels, rng.dirichlet(np.ones(n_points)))


def reweighted(rng: np.random.Generator, p: EmpiricalDistribution) -> EmpiricalDistribution:
    """Same support as ``p`` with fresh random probabilities."""
    return EmpiricalDistribution(p.features, p.labels, rng.dirichlet(np.ones(len(p))))


def random_risk_model(
    rng: np.random.Generator, dim: int = 2, num_classes: int = 3, loss: LossKind = LossKind.ZERO_ONE
) -> RiskModel:
    return RiskModel(linear_classifier(rng.normal(size=(dim, num_classes)), rng.normal(size=num_classes)), loss)


def random_perturbations(
    rng: np.random.Generator, p: EmpiricalDistribution, count: int, epsilon_b: float
) -> list[np.ndarray]:
    """``count`` points per support point, uniform in radius inside the epsilon_b ball."""
    out = []
    for x in p.features:
        directions = rng.normal(size=(count, p.dim))
        directions /= np.maximum(np.linalg.norm(directions, axis=1, keepdims=True), 1e-12)
        radii = rng.random((count, 1)) * epsilon_b
        out.append(x + directions * radii)
    return out


def lemma31_instance(rng: np.random.Generator, max_points: int = 16) -> ShiftCheck:
    n = int(rng.integers(1, max_points + 1))
    dim, k = 2, 3
    rm = random_risk_model(rng, dim, k)
    p = random_distribution(rng, n, dim, k)
    # Half the time share the support, otherwise draw an unrelated one.
    shifted = reweighted(rng, p) if rng.random() < 0.5 else random_distribution(rng, int(rng.integers(1, max_points + 1)), dim, k)
    return lemma31_check(rm, p, shifted)


def lemma33_instance(
    rng: np.random.Generator, n_points: int = 8, count: int = 4, epsilon_b: float = 0.1
) -> AdversarialCheck:
    rm = random_risk_model(rng)
    p = random_distribution(rng, n_points)
    return lemma33_check(rm, p, random_perturbations(rng, p, count, epsilon_b), epsilon_b)


@dataclass(frozen=True)
class TransferInstance:
    set1: list[EmpiricalDistribution]
    set2: list[EmpiricalDistribution]
    shifted: EmpiricalDistribution


def transfer_instance(rng: np.random.Generator, n_points: int = 6, set_size: int = 3) -> TransferInstance:
    """Two distribution sets sharing one member, plus a shifted target."""
    shared = random_distribution(rng, n_points)
    set1 = [shared, *(random_distribution(rng, n_points) for _ in range(set_size - 1))]
    set2 = [*(random_distribution(rng, n_points) for _ in range(set_size - 1)), shared]
    return TransferInstance(set1, set2, random_distribution(rng, n_points))


def lemma34_instance(rng: np.random.Generator, n_points: int = 6) -> TransferCheck:
    inst = transfer_instance(rng, n_points)
    return lemma34_check(inst.set1, inst.set2, inst.shifted, mixture_augmentation())


def run_instances(make: Callable[[np.random.Generator], object], count: int, seed: int = 0, workers: int = 1) -> list:
    """Evaluate ``count`` independent instances; instance i uses its own generator spawned from ``seed``."""
    rngs = np.random.default_rng(seed).spawn(count)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(make, rngs))
    return [make(rng) for rng in rngs]
