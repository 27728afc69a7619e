"""
Training objectives as pure functions of logits and labels.

Naming: ``theta_*`` are student logits, ``phi_*`` teacher logits; ``clean``
is the original sample, ``aug`` an augmented (adversarial) one. KL terms
are forward KL from teacher to student at temperature t, scaled by t**2.
"""
import enum
from dataclasses import dataclass
from typing import ClassVar, NamedTuple

import torch
import torch.nn.functional as F


class Objective(enum.StrEnum):
    CE = "ce"
    KD = "kd"
    DAD = "dad"
    AT = "at"
    DAT = "dat"
    ARD = "ard"
    RSLAD = "rslad"
    DAT_DAD = "dat_dad"


class Requirements(NamedTuple):
    teacher: bool
    cache: bool
    discretizer: bool
    # Online attack on the clean elements driven by the student.
    student_attack: bool
    # Whether a supplied cache is consumed at all.
    uses_cache: bool


REQUIREMENTS: dict[Objective, Requirements] = {
    Objective.CE: Requirements(False, False, False, False, True),
    Objective.KD: Requirements(True, False, False, False, False),
    Objective.DAD: Requirements(True, True, False, False, True),
    Objective.AT: Requirements(False, False, False, True, False),
    Objective.DAT: Requirements(False, False, True, True, False),
    Objective.ARD: Requirements(True, False, False, True, False),
    Objective.RSLAD: Requirements(True, False, False, True, False),
    Objective.DAT_DAD: Requirements(True, True, True, True, True),
}


@dataclass(frozen=True)
class DistillConfig:
    KEY_PREFIX: ClassVar[str] = ""

    temperature: float = 4.0
    weight: float = 0.5
    objective: Objective = Objective.CE
    # Whether ``weight`` also multiplies the clean KL term of the DAD loss.
    weight_first_kl: bool = True

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0 <= self.weight <= 1:
            raise ValueError(f"weight must be in [0, 1], got {self.weight}")

    @property
    def requirements(self) -> Requirements:
        return REQUIREMENTS[self.objective]


def _zero(like: torch.Tensor) -> torch.Tensor:
    # Keeps the autograd graph so empty subsets can be summed with live terms.
    return like.sum() * 0.0


def cross_entropy(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Batch-mean negative log-likelihood of ``y``; 0 for an empty batch."""
    if logits.shape[0] == 0:
        return _zero(logits)
    k = logits.shape[-1]
    if y.min() < 0 or y.max() >= k:
        raise ValueError(f"Labels must be in [0, {k}), got range [{int(y.min())}, {int(y.max())}]")
    return F.cross_entropy(logits, y)


def kl_temp(student_logits: torch.Tensor, teacher_logits: torch.Tensor, t: float) -> torch.Tensor:
    """t**2 * KL(softmax(teacher / t) || softmax(student / t)), batch mean."""
    if t <= 0:
        raise ValueError(f"Temperature must be positive, got {t}")
    if student_logits.shape != teacher_logits.shape:
        raise ValueError(f"Shape mismatch: {tuple(student_logits.shape)} vs {tuple(teacher_logits.shape)}")
    if student_logits.shape[0] == 0:
        return _zero(student_logits)
    log_s = F.log_softmax(student_logits / t, dim=-1)
    log_t = F.log_softmax(teacher_logits / t, dim=-1)
    kl = F.kl_div(log_s, log_t, log_target=True, reduction="batchmean")
    return (t * t) * kl.clamp_min(0.0)


def kd_loss(theta_clean, phi_clean, y, cfg: DistillConfig) -> torch.Tensor:
    return cross_entropy(theta_clean, y) + cfg.weight * kl_temp(theta_clean, phi_clean, cfg.temperature)


def dad_loss(theta_clean, phi_clean, theta_aug, phi_aug, y, cfg: DistillConfig) -> torch.Tensor:
    """Clean CE plus KL on clean and on augmented samples; augmented samples carry no label term."""
    first = cfg.weight if cfg.weight_first_kl else 1.0
    return (
        cross_entropy(theta_clean, y)
        + first * kl_temp(theta_clean, phi_clean, cfg.temperature)
        + cfg.weight * kl_temp(theta_aug, phi_aug, cfg.temperature)
    )


def at_loss(theta_clean, theta_adv, y) -> torch.Tensor:
    return cross_entropy(theta_clean, y) + cross_entropy(theta_adv, y)


def dat_loss(theta_clean, theta_disc_adv, y) -> torch.Tensor:
    # Same algebra as adversarial training; the adversarial input went through Q.
    return at_loss(theta_clean, theta_disc_adv, y)


def ard_loss(theta_aug, phi_clean, theta_clean, y, cfg: DistillConfig) -> torch.Tensor:
    return cross_entropy(theta_clean, y) + cfg.weight * kl_temp(theta_aug, phi_clean, cfg.temperature)


def rslad_loss(theta_clean, theta_aug, phi_clean, cfg: DistillConfig) -> torch.Tensor:
    return kl_temp(theta_clean, phi_clean, cfg.temperature) + cfg.weight * kl_temp(
        theta_aug, phi_clean, cfg.temperature
    )


def dat_dad_loss(
    theta_clean,
    phi_clean,
    theta_aug,
    phi_aug,
    theta_student_adv,
    y,
    cfg: DistillConfig,
) -> torch.Tensor:
    return dad_loss(theta_clean, phi_clean, theta_aug, phi_aug, y, cfg) + cfg.weight * cross_entropy(
        theta_student_adv, y
    )
