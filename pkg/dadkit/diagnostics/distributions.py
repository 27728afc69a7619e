"""
Finite distributions over (feature vector, label) pairs, Gaussian layer
statistics and the loss/hypothesis pair used by the risk functionals.

Text format of an ``EmpiricalDistribution``, one support point per line::

    # probability label feature_1 ... feature_d
    0.25 1 0.10 0.70
    0.75 0 0.30 0.20
"""
import enum
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import log_softmax

_SIMPLEX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    features: np.ndarray  # [n, d] float64
    labels: np.ndarray  # [n] int64
    probs: np.ndarray  # [n] float64

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if not (features.shape[0] == labels.shape[0] == probs.shape[0]):
            raise ValueError(
                f"Support size mismatch: {features.shape[0]} features, {labels.shape[0]} labels, {probs.shape[0]} probs"
            )
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("Probabilities must be finite and non-negative")
        if probs.size and abs(probs.sum() - 1.0) > _SIMPLEX_TOL:
            raise ValueError(f"Probabilities sum to {probs.sum()!r}, not 1")
        if not np.all(np.isfinite(features)):
            raise ValueError("Features must be finite")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, features, labels) -> "EmpiricalDistribution":
        n = len(labels)
        return cls(features, labels, np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, feature, label: int) -> "EmpiricalDistribution":
        return cls(np.asarray(feature, dtype=np.float64)[None], [label], [1.0])

    def __len__(self) -> int:
        return self.probs.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def keys(self) -> list[tuple[tuple[float, ...], int]]:
        return [(tuple(f.tolist()), int(y)) for f, y in zip(self.features, self.labels)]

    def masses(self) -> dict[tuple[tuple[float, ...], int], float]:
        """Probability per distinct support point; duplicate points are merged."""
        out: dict = {}
        for key, p in zip(self.keys(), self.probs.tolist()):
            out[key] = out.get(key, 0.0) + p
        return out

    def normalized(self) -> "EmpiricalDistribution":
        merged = {k: p for k, p in sorted(self.masses().items()) if p > 0}
        if not merged:
            return self
        keys = list(merged)
        features = np.array([k[0] for k in keys], dtype=np.float64)
        labels = np.array([k[1] for k in keys], dtype=np.int64)
        return EmpiricalDistribution(features, labels, np.array(list(merged.values())))

    def same_as(self, other: "EmpiricalDistribution", tol: float = 1e-12) -> bool:
        a, b = self.masses(), other.masses()
        keys = set(a) | set(b)
        return all(abs(a.get(k, 0.0) - b.get(k, 0.0)) <= tol for k in keys)

    def pushforward(self, features: np.ndarray) -> "EmpiricalDistribution":
        """Move every support point to a new feature vector, keeping labels and probabilities."""
        return EmpiricalDistribution(features, self.labels, self.probs)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        lines = ["# probability label features..."]
        for p, y, f in zip(self.probs, self.labels, self.features):
            lines.append(" ".join([repr(float(p)), str(int(y)), *(repr(float(v)) for v in f)]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "EmpiricalDistribution":
        probs, labels, features = [], [], []
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: expected 'probability label features...', got {raw!r}")
            probs.append(float(parts[0]))
            labels.append(int(parts[1]))
            features.append([float(v) for v in parts[2:]])
        if len({len(f) for f in features}) > 1:
            raise ValueError(f"{path}: support points have different feature dimensions")
        return cls(np.array(features, dtype=np.float64).reshape(len(features), -1), labels, probs)


def mixture(dists: Sequence[EmpiricalDistribution], weights: Sequence[float] | None = None) -> EmpiricalDistribution:
    if not dists:
        raise ValueError("Cannot mix an empty set of distributions")
    weights = np.full(len(dists), 1.0 / len(dists)) if weights is None else np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != len(dists) or abs(weights.sum() - 1.0) > _SIMPLEX_TOL:
        raise ValueError("Mixture weights must match the distributions and sum to 1")
    return EmpiricalDistribution(
        np.concatenate([d.features for d in dists]),
        np.concatenate([d.labels for d in dists]),
        np.concatenate([w * d.probs for w, d in zip(weights, dists)]),
    )


@dataclass(frozen=True, eq=False)
class GaussianStats:
    """Per-channel (mean, variance) for every collected layer."""

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    batch_count: int
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.batch_count <= 0:
            raise ValueError(f"batch_count must be positive, got {self.batch_count}")
        for mean, var in self.layers:
            if mean.shape != var.shape:
                raise ValueError("Mean and variance shapes differ")
            if np.any(var < 0):
                raise ValueError("Variances must be non-negative")

    def layout(self) -> list[int]:
        return [mean.shape[0] for mean, _ in self.layers]


class LossKind(enum.StrEnum):
    ZERO_ONE = "zero_one"
    CROSS_ENTROPY = "cross_entropy"


@dataclass(frozen=True)
class RiskModel:
    """A fixed hypothesis (features [n, d] -> scores [n, K]) paired with a loss."""

    classifier: Callable[[np.ndarray], np.ndarray]
    loss: LossKind = LossKind.ZERO_ONE

    def losses(self, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        scores = np.asarray(self.classifier(np.asarray(features, dtype=np.float64)), dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if LossKind(self.loss) is LossKind.ZERO_ONE:
            return (np.argmax(scores, axis=1) != labels).astype(np.float64)
        return -log_softmax(scores, axis=1)[np.arange(labels.shape[0]), labels]


def linear_classifier(weights: np.ndarray, bias: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)

    def scores(features: np.ndarray) -> np.ndarray:
        return features @ weights + bias

    return scores
