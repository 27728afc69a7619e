"""
Projected gradient attacks and discretized adversarial examples.

``attack`` ascends cross-entropy with signed (l-inf) or normalized (l2)
gradient steps, projecting onto the epsilon ball around the starting image
and clipping to [0, 1] after every step. ``dad_generate`` runs the attack on
Q(x) with teacher gradients flowing through Q, re-discretizes the result and
applies the teacher-oracle filter.
"""
import enum
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import partial
from typing import ClassVar

import torch
import torch.nn.functional as F

from dadkit.discretizer import Discretizer, discretize
from dadkit.errors import DivergenceError
from dadkit.model import Classifier, argmax_rows, logits
from dadkit.utils import make_generator

_log = logging.getLogger(__name__)


class Norm(enum.StrEnum):
    LINF = "inf"
    L2 = "2"

    @classmethod
    def _missing_(cls, value):
        aliases = {"linf": cls.LINF, "l_inf": cls.LINF, "infinity": cls.LINF, "l2": cls.L2}
        return aliases.get(str(value).strip().lower())


class Augmentation(enum.StrEnum):
    GRADIENT = "gradient"
    SAMPLE = "sample"


@dataclass(frozen=True)
class AttackConfig:
    KEY_PREFIX: ClassVar[str] = ""

    epsilon: float = 8 / 255
    steps: int = 1
    step_size: float = 0.1
    norm: Norm = Norm.LINF

    def __post_init__(self):
        object.__setattr__(self, "norm", Norm(self.norm))
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")


@dataclass
class AdversarialRecord:
    sample_id: int
    label: int
    image: torch.Tensor  # Q(x'), [C, H, W]
    teacher_logits_aug: torch.Tensor  # teacher on Q(x')
    teacher_logits_clean: torch.Tensor  # teacher on x
    accepted: bool
    seed: int = 0


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------


def _per_sample(values: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return values.view(-1, *([1] * (like.dim() - 1)))


def project_linf(x_adv: torch.Tensor, x0: torch.Tensor, eps: float) -> torch.Tensor:
    lo = (x0 - eps).clamp(0, 1)
    hi = (x0 + eps).clamp(0, 1)
    out = torch.maximum(torch.minimum(x_adv, hi), lo)
    # x0 + eps can round one ulp past the ball; step those entries back toward x0.
    for _ in range(4):
        over = (out - x0).abs() > eps
        if not over.any():
            break
        out = torch.where(over, torch.nextafter(out, x0), out)
    return out


def l2_norms(delta: torch.Tensor) -> torch.Tensor:
    return delta.flatten(1).norm(dim=1)


def project_l2(x_adv: torch.Tensor, x0: torch.Tensor, eps: float) -> torch.Tensor:
    delta = x_adv - x0
    norms = l2_norms(delta)
    factor = torch.where(norms > eps, eps / norms.clamp_min(1e-30), torch.ones_like(norms))
    out = (x0 + delta * _per_sample(factor, delta)).clamp(0, 1)
    for _ in range(16):
        over = l2_norms(out - x0) > eps
        if not over.any():
            break
        shrunk = x0 + (out - x0) * (1 - 1e-6)
        out = torch.where(_per_sample(over, out), shrunk, out)
    return out


def project(x_adv: torch.Tensor, x0: torch.Tensor, cfg: AttackConfig) -> torch.Tensor:
    if cfg.norm is Norm.LINF:
        return project_linf(x_adv, x0, cfg.epsilon)
    return project_l2(x_adv, x0, cfg.epsilon)


def random_start(x0: torch.Tensor, cfg: AttackConfig, generator: torch.Generator) -> torch.Tensor:
    """A uniformly drawn point of the l-inf ball, or a random direction scaled into the l2 ball."""
    if cfg.norm is Norm.LINF:
        noise = (torch.rand(x0.shape, generator=generator) * 2 - 1) * cfg.epsilon
    else:
        noise = torch.randn(x0.shape, generator=generator)
        radius = torch.rand((x0.shape[0],), generator=generator) * cfg.epsilon
        noise = noise * _per_sample(radius / l2_norms(noise).clamp_min(1e-12), noise)
    return project(x0 + noise.to(x0), x0, cfg)


# ---------------------------------------------------------------------------
# Attacks
# ---------------------------------------------------------------------------


def attack(
    model: Classifier,
    x: torch.Tensor,
    y: torch.Tensor,
    cfg: AttackConfig,
    *,
    through: Callable[[torch.Tensor], torch.Tensor] | None = None,
    start: torch.Tensor | None = None,
) -> torch.Tensor:
    """
    Maximize CE(model(through(x')), y) over ||x' - x||_p <= epsilon.
    The model is put in eval mode for the duration of the attack.
    """
    if x.numel() and (x.min() < 0 or x.max() > 1):
        raise ValueError("Attack input must lie in [0, 1]")
    x0 = x.detach()
    x_adv = x0.clone() if start is None else project(start.detach(), x0, cfg)
    if x0.shape[0] == 0:
        return x_adv

    was_training = model.training
    model.eval()
    try:
        with torch.enable_grad():
            for step in range(cfg.steps):
                x_adv = x_adv.detach().requires_grad_(True)
                inputs = through(x_adv) if through is not None else x_adv
                loss = F.cross_entropy(logits(model, inputs), y, reduction="sum")
                (grad,) = torch.autograd.grad(loss, x_adv)
                if not torch.isfinite(grad).all():
                    raise DivergenceError(f"Non-finite input gradient at attack step {step}")
                if cfg.norm is Norm.LINF:
                    update = cfg.step_size * grad.sign()
                else:
                    norms = l2_norms(grad)
                    scale = torch.where(norms > 0, cfg.step_size / norms.clamp_min(1e-30), torch.zeros_like(norms))
                    update = grad * _per_sample(scale, grad)
                x_adv = project(x_adv.detach() + update, x0, cfg)
    finally:
        model.train(was_training)
    return x_adv.detach()


def _discretizer_of(disc: Discretizer) -> Callable[[torch.Tensor], torch.Tensor]:
    return partial(discretize, disc)


def dad_generate_batch(
    teacher: Classifier,
    disc: Discretizer,
    x: torch.Tensor,
    y: torch.Tensor,
    cfg: AttackConfig,
    *,
    sample_ids: Sequence[int],
    seeds: Sequence[int] | None = None,
    augmentation: Augmentation = Augmentation.GRADIENT,
    random_start_seeds: Sequence[int] | None = None,
) -> list[AdversarialRecord]:
    """
    Q(x) -> teacher attack through Q -> Q(x'), with the oracle verdict per sample.
    With ``random_start_seeds`` the attack starts from a seeded random point of
    the ball around Q(x) instead of Q(x) itself.
    """
    with torch.no_grad():
        x_q = discretize(disc, x)
    if augmentation is Augmentation.GRADIENT:
        start = None if random_start_seeds is None else seeded_starts(x_q, cfg, random_start_seeds)
        x_adv = attack(teacher, x_q, y, cfg, through=_discretizer_of(disc), start=start)
    else:
        x_adv = x_q
    with torch.no_grad():
        out = discretize(disc, x_adv)
        logits_aug = logits(teacher, out)
        logits_clean = logits(teacher, x)
    accepted = argmax_rows(logits_aug) == y

    seeds = list(seeds) if seeds is not None else [0] * len(sample_ids)
    return [
        AdversarialRecord(
            sample_id=int(sample_ids[i]),
            label=int(y[i]),
            image=out[i].detach().float().cpu(),
            teacher_logits_aug=logits_aug[i].detach().float().cpu(),
            teacher_logits_clean=logits_clean[i].detach().float().cpu(),
            accepted=bool(accepted[i]),
            seed=int(seeds[i]),
        )
        for i in range(len(sample_ids))
    ]


def dad_generate(
    teacher: Classifier,
    disc: Discretizer,
    x: torch.Tensor,
    y: int | torch.Tensor,
    cfg: AttackConfig,
    *,
    sample_id: int = 0,
    seed: int = 0,
    augmentation: Augmentation = Augmentation.GRADIENT,
) -> AdversarialRecord:
    """Single-image form of ``dad_generate_batch``; ``x`` is [C, H, W]."""
    label = torch.as_tensor([int(y)], device=x.device)
    (record,) = dad_generate_batch(
        teacher, disc, x[None], label, cfg, sample_ids=[sample_id], seeds=[seed], augmentation=augmentation
    )
    return record


def student_attack(
    student: Classifier,
    disc: Discretizer,
    x: torch.Tensor,
    y: torch.Tensor,
    cfg: AttackConfig,
    *,
    return_perturbed: bool = False,
) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
    """
    The DAT inner maximization: the same pipeline as ``dad_generate`` driven by
    the student's own gradients, without the oracle filter.
    """
    with torch.no_grad():
        x_q = discretize(disc, x)
    x_adv = attack(student, x_q, y, cfg, through=_discretizer_of(disc))
    with torch.no_grad():
        x_disc = discretize(disc, x_adv)
    if return_perturbed:
        return x_disc, x_adv
    return x_disc


def seeded_starts(x0: torch.Tensor, cfg: AttackConfig, seeds: Sequence[int]) -> torch.Tensor:
    """Per-sample random starts, each drawn from its own seeded generator."""
    rows = [random_start(x0[i : i + 1].cpu(), cfg, make_generator(s)) for i, s in enumerate(seeds)]
    return torch.cat(rows).to(x0.device)
