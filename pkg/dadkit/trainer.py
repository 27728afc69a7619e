"""
Outer training loop over mixed clean/augmented batches.

Pass accounting is per sample: every student or teacher forward of one image
counts 1, every student backward of one image counts 1, and one attack step
on one image counts in ``attack_steps`` (a forward plus a backward of the
attacked model, so 2 passes in the cost). Discretizer passes are not counted.
"""
import csv
import enum
import logging
import time
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar

import torch

from dadkit.adversary import AttackConfig, attack, student_attack
from dadkit.data import Batch, ImageDataset, mixed_batches, sequential_batches
from dadkit.discretizer import Discretizer
from dadkit.errors import DivergenceError, MissingInputError
from dadkit.model import Classifier, logits
from dadkit.objectives import (
    DistillConfig,
    Objective,
    ard_loss,
    at_loss,
    cross_entropy,
    dad_loss,
    dat_dad_loss,
    dat_loss,
    kd_loss,
    rslad_loss,
)

_log = logging.getLogger(__name__)


class OptimizerKind(enum.StrEnum):
    SGD = "sgd"
    ADAM = "adam"


class Schedule(enum.StrEnum):
    COSINE = "cosine"
    CONSTANT = "constant"


@dataclass(frozen=True)
class TrainConfig:
    KEY_PREFIX: ClassVar[str] = ""

    epochs: int = 10
    batch_size: int = 64
    optimizer: OptimizerKind = OptimizerKind.SGD
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: Schedule = Schedule.COSINE
    seed: int = 0
    precompute_teacher: bool = True
    objective: DistillConfig = field(default_factory=DistillConfig, metadata={"nested": True})
    attack: AttackConfig = field(default_factory=AttackConfig, metadata={"nested": True})

    def __post_init__(self):
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        object.__setattr__(self, "schedule", Schedule(self.schedule))
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")


@dataclass
class TrainLog:
    objective: str = ""
    epochs: int = 0
    dataset_size: int = 0
    epoch_losses: list[float] = field(default_factory=list)
    # Cumulative counters, one entry per finished epoch.
    forward: list[int] = field(default_factory=list)
    backward: list[int] = field(default_factory=list)
    attack_steps: list[int] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)

    @property
    def total_forward(self) -> int:
        return self.forward[-1] if self.forward else 0

    @property
    def total_backward(self) -> int:
        return self.backward[-1] if self.backward else 0

    @property
    def total_attack_steps(self) -> int:
        return self.attack_steps[-1] if self.attack_steps else 0

    @property
    def attack_passes(self) -> int:
        return 2 * self.total_attack_steps

    @property
    def cost(self) -> int:
        return self.total_forward + self.total_backward + self.attack_passes

    def epoch_forward(self) -> list[int]:
        """Forward passes spent in each epoch (differences of the cumulative counter)."""
        return [b - a for a, b in zip([0, *self.forward], self.forward)]

    CSV_COLUMNS: ClassVar[list[str]] = [
        "objective",
        "dataset_size",
        "epoch",
        "loss",
        "forward",
        "backward",
        "attack_steps",
        "seconds",
    ]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_COLUMNS)
            rows = zip(self.epoch_losses, self.forward, self.backward, self.attack_steps, self.wall_clock)
            for epoch, (loss, fwd, bwd, atk, secs) in enumerate(rows):
                writer.writerow([self.objective, self.dataset_size, epoch, repr(loss), fwd, bwd, atk, f"{secs:.3f}"])
        return path

    @classmethod
    def read_csv(cls, path: str | Path) -> "TrainLog":
        log = cls()
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                log.objective = row["objective"]
                log.dataset_size = int(row["dataset_size"])
                log.epoch_losses.append(float(row["loss"]))
                log.forward.append(int(row["forward"]))
                log.backward.append(int(row["backward"]))
                log.attack_steps.append(int(row["attack_steps"]))
                log.wall_clock.append(float(row["seconds"]))
        log.epochs = len(log.epoch_losses)
        return log


def build_optimizer(
    model: torch.nn.Module, cfg: TrainConfig, steps_per_epoch: int
) -> tuple[torch.optim.Optimizer, torch.optim.lr_scheduler.LRScheduler | None]:
    params = [p for p in model.parameters() if p.requires_grad]
    if cfg.optimizer is OptimizerKind.SGD:
        optimizer = torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    else:
        optimizer = torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    scheduler = None
    if cfg.schedule is Schedule.COSINE:
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=max(1, cfg.epochs * steps_per_epoch)
        )
    return optimizer, scheduler


def check_inputs(
    objective: Objective,
    *,
    teacher: Classifier | None,
    cache: object | None,
    discretizer: Discretizer | None,
) -> None:
    needs = DistillConfig(objective=objective).requirements
    missing = [
        name
        for name, needed, given in (
            ("teacher", needs.teacher, teacher),
            ("cache", needs.cache, cache),
            ("discretizer", needs.discretizer, discretizer),
        )
        if needed and given is None
    ]
    if missing:
        raise MissingInputError(f"Objective {objective.value!r} needs: {', '.join(missing)}")


@torch.no_grad()
def teacher_logits_by_id(teacher: Classifier, dataset: ImageDataset, batch_size: int, device) -> dict[int, torch.Tensor]:
    out = {}
    for images, _, ids in sequential_batches(dataset, batch_size):
        rows = logits(teacher, images.to(device))
        out.update(zip(ids, rows))
    return out


class _Step:
    """Loss computation for one mixed batch; bumps the pass counters."""

    def __init__(
        self,
        student: Classifier,
        cfg: TrainConfig,
        teacher: Classifier | None,
        discretizer: Discretizer | None,
        teacher_cache: Mapping[int, torch.Tensor] | None,
    ):
        self.student = student
        self.cfg = cfg
        self.teacher = teacher
        self.discretizer = discretizer
        self.teacher_cache = teacher_cache
        self.forward = 0
        self.backward = 0
        self.attack_steps = 0

    def phi_clean(self, images: torch.Tensor, ids: list[int]) -> torch.Tensor:
        if self.teacher_cache is not None:
            rows = [self.teacher_cache[i] for i in ids]
            if not rows:
                return torch.zeros((0, self.student.num_classes), device=images.device)
            return torch.stack(rows).to(images.device)
        self.forward += images.shape[0]
        with torch.no_grad():
            return logits(self.teacher, images)

    def adversarial(self, x: torch.Tensor, y: torch.Tensor, through_q: bool) -> torch.Tensor:
        self.attack_steps += x.shape[0] * self.cfg.attack.steps
        if through_q:
            return student_attack(self.student, self.discretizer, x, y, self.cfg.attack)
        return attack(self.student, x, y, self.cfg.attack)

    def loss(self, batch: Batch) -> torch.Tensor:
        objective = self.cfg.objective.objective
        dcfg = self.cfg.objective
        clean = ~batch.augmented
        x_c, y_c = batch.images[clean], batch.labels[clean]
        ids_c = [i for i, is_aug in zip(batch.ids, batch.augmented.tolist()) if not is_aug]

        out = self.student(batch.images)
        self.forward += len(batch)
        self.backward += len(batch)
        theta_c = out[clean]
        theta_a = out[batch.augmented]
        phi_a = batch.teacher_logits[batch.augmented] if batch.teacher_logits is not None else theta_a.detach()

        match objective:
            case Objective.CE:
                return cross_entropy(out, batch.labels)
            case Objective.KD:
                return kd_loss(theta_c, self.phi_clean(x_c, ids_c), y_c, dcfg)
            case Objective.DAD:
                return dad_loss(theta_c, self.phi_clean(x_c, ids_c), theta_a, phi_a, y_c, dcfg)

        through_q = self.discretizer is not None
        x_adv = self.adversarial(x_c, y_c, through_q)
        theta_adv = self.student(x_adv) if x_adv.shape[0] else theta_c[:0]
        self.forward += x_adv.shape[0]
        self.backward += x_adv.shape[0]

        match objective:
            case Objective.AT:
                return at_loss(theta_c, theta_adv, y_c)
            case Objective.DAT:
                return dat_loss(theta_c, theta_adv, y_c)
            case Objective.ARD:
                return ard_loss(theta_adv, self.phi_clean(x_c, ids_c), theta_c, y_c, dcfg)
            case Objective.RSLAD:
                return rslad_loss(theta_c, theta_adv, self.phi_clean(x_c, ids_c), dcfg)
            case Objective.DAT_DAD:
                phi_c = self.phi_clean(x_c, ids_c)
                return dat_dad_loss(theta_c, phi_c, theta_a, phi_a, theta_adv, y_c, dcfg)
        raise ValueError(f"Unknown objective {objective!r}")


def train(
    student: Classifier,
    dataset: ImageDataset,
    cfg: TrainConfig,
    *,
    teacher: Classifier | None = None,
    cache: Iterable | None = None,
    discretizer: Discretizer | None = None,
    device: torch.device | str = "cpu",
) -> tuple[Classifier, TrainLog]:
    """
    Train ``student`` in place and return it with its ``TrainLog``.
    The teacher is frozen and only ever run in eval mode.
    """
    objective = cfg.objective.objective
    needs = cfg.objective.requirements
    check_inputs(objective, teacher=teacher, cache=cache, discretizer=discretizer)

    device = torch.device(device)
    torch.manual_seed(cfg.seed & 0x7FFF_FFFF_FFFF_FFFF)
    student = student.to(device)
    if teacher is not None:
        teacher = teacher.to(device).freeze()
    if discretizer is not None:
        discretizer = discretizer.to(device).freeze()
        if not needs.discretizer and objective not in (Objective.ARD, Objective.RSLAD):
            _log.warning("objective %s does not use a discretizer; ignoring it", objective.value)
            discretizer = None

    records = list(cache) if cache is not None else []
    if records and not needs.uses_cache:
        _log.warning("objective %s does not consume a cache; ignoring %d records", objective.value, len(records))
        records = []

    n_batches = -(-(len(dataset) + sum(r.accepted for r in records)) // cfg.batch_size)
    optimizer, scheduler = build_optimizer(student, cfg, n_batches)

    log = TrainLog(objective=objective.value, epochs=cfg.epochs, dataset_size=len(dataset))
    teacher_cache = None
    precompute_passes = 0
    if needs.teacher and cfg.precompute_teacher:
        teacher_cache = teacher_logits_by_id(teacher, dataset, max(cfg.batch_size, 256), device)
        precompute_passes = len(dataset)

    step = _Step(student, cfg, teacher, discretizer, teacher_cache)
    step.forward = precompute_passes
    started = time.perf_counter()

    for epoch in range(cfg.epochs):
        student.train()
        losses = []
        for b, batch in enumerate(mixed_batches(dataset, records, cfg.batch_size, cfg.seed, epoch)):
            batch = batch.to(device)
            loss = step.loss(batch)
            if not torch.isfinite(loss):
                raise DivergenceError(f"Training loss became {loss.item()}", epoch=epoch, batch=b)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            losses.append(float(loss))

        log.epoch_losses.append(sum(losses) / len(losses) if losses else 0.0)
        log.forward.append(step.forward)
        log.backward.append(step.backward)
        log.attack_steps.append(step.attack_steps)
        log.wall_clock.append(time.perf_counter() - started)
        _log.info(
            "epoch %d/%d [%s]: loss=%.5f forward=%d backward=%d attack_steps=%d",
            epoch + 1,
            cfg.epochs,
            objective.value,
            log.epoch_losses[-1],
            step.forward,
            step.backward,
            step.attack_steps,
        )

    student.eval()
    return student, log


# ---------------------------------------------------------------------------
# Budget
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BudgetRow:
    name: str
    attack_steps_per_sample: float
    cost: int
    relative: float


def budget_report(logs: Mapping[str, TrainLog], baseline: str = "baseline") -> list[BudgetRow]:
    """Cost of each run as (forward + backward + attack passes) over the baseline's."""
    if baseline not in logs:
        raise ValueError(f"No baseline log named {baseline!r}")
    base = logs[baseline]
    if base.cost == 0:
        raise ValueError("Baseline log has zero cost")
    rows = []
    for name, log in logs.items():
        if log.epochs != base.epochs:
            raise ValueError(f"Run {name!r} trained {log.epochs} epochs, baseline {base.epochs}")
        if log.dataset_size != base.dataset_size:
            raise ValueError(f"Run {name!r} used {log.dataset_size} samples, baseline {base.dataset_size}")
        per_sample = log.total_attack_steps / (log.dataset_size * log.epochs) if log.dataset_size else 0.0
        rows.append(BudgetRow(name, per_sample, log.cost, log.cost / base.cost))
    return rows


def write_budget_csv(rows: Iterable[BudgetRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "attack_steps_per_sample", "cost", "relative"])
        for row in rows:
            writer.writerow([row.name, f"{row.attack_steps_per_sample:.3f}", row.cost, f"{row.relative:.3f}"])
    return path
