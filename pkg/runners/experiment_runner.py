import csv
import dataclasses
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from dadkit.cache import build_cache, write_cache
from dadkit.corruptions import CorruptionKind, CorruptionSpec, corrupt_dataset, parse_severities, with_corruptions
from dadkit.data import ImageDataset, make_synthetic, save_dataset
from dadkit.discretizer import save_discretizer, train_discretizer
from dadkit.errors import ConfigError
from dadkit.evaluator import top1
from dadkit.model import save_classifier
from dadkit.objectives import Objective
from dadkit.trainer import train
from dadkit.utils import derive_seed
from runners.runner import Runner

_log = logging.getLogger(__name__)

OBJECTIVES = (Objective.CE, Objective.KD, Objective.DAD)


@dataclass
class ExperimentResult:
    path: Path
    # objective -> per-seed mean held-out accuracy
    scores: dict[str, list[float]] = field(default_factory=dict)
    margin: float = 2.0

    def median(self, objective: str) -> float:
        return statistics.median(self.scores[objective])

    @property
    def ordering_holds(self) -> bool:
        dad, kd, ce = (self.median(o.value) for o in (Objective.DAD, Objective.KD, Objective.CE))
        return dad >= kd >= ce and dad - ce >= self.margin


class ExperimentRunner(Runner[ExperimentResult]):
    """
    Diverse teacher on clean plus corrupted data, then CE / KD / DAD students
    over several seeds, scored on corruption kinds the teacher never saw.
    """

    command = "experiment"

    def flag_overrides(self) -> dict[str, object]:
        return {"seed": self.args.seed, "epochs": self.args.epochs, "vq_epochs": self.args.vq_epochs}

    def output_dir(self) -> Path:
        return Path(self.args.out)

    def _kinds(self, text: str) -> list[CorruptionKind]:
        try:
            return [CorruptionKind(k.strip()) for k in text.split(",") if k.strip()]
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def run(self) -> ExperimentResult:
        out = Path(self.args.out)
        seed = self.seed
        cfg = self.train_config()
        train_kinds = self._kinds(self.args.train_kinds)
        heldout_kinds = self._kinds(self.args.heldout_kinds)
        if set(train_kinds) & set(heldout_kinds):
            raise ConfigError("held-out corruption kinds must differ from the teacher's training kinds")
        try:
            seeds = [int(s) for s in self.args.seeds.split(",") if s.strip()]
        except ValueError as e:
            raise ConfigError(f"--seeds: {e}") from e
        if not seeds:
            raise ConfigError("--seeds lists no seeds")

        train_set = make_synthetic(10, self.args.per_class, seed=seed, name="train")
        test_set = make_synthetic(10, self.args.test_per_class, seed=derive_seed("test", seed), name="test")
        save_dataset(train_set, out / "data", "train")
        save_dataset(test_set, out / "data", "test")
        suites = self.heldout_suites(test_set, heldout_kinds, seed)

        _log.info("training diverse teacher on clean + %s", ", ".join(k.value for k in train_kinds))
        teacher = self.build_model(train_set, architecture="wide", seed=derive_seed("teacher", seed))
        teacher_cfg = dataclasses.replace(
            cfg,
            epochs=self.args.teacher_epochs,
            objective=dataclasses.replace(cfg.objective, objective=Objective.CE),
        )
        teacher, _ = train(teacher, with_corruptions(train_set, train_kinds, seed=seed), teacher_cfg, device=self.device)
        save_classifier(teacher, out / "teacher.pt")

        disc = train_discretizer(train_set, self.discretizer_config(), device=self.device)
        save_discretizer(disc, out / "vq.pt")
        cache = build_cache(train_set, teacher, disc, cfg.attack, seed, device=self.device)
        write_cache(cache, out / "cache.bin")

        result = ExperimentResult(path=out / "results.csv", margin=self.args.margin)
        rows = []
        for run_seed in seeds:
            for objective in OBJECTIVES:
                run_cfg = dataclasses.replace(
                    cfg, seed=run_seed, objective=dataclasses.replace(cfg.objective, objective=objective)
                )
                student = self.build_model(train_set, seed=run_seed)
                student, _ = train(
                    student,
                    train_set,
                    run_cfg,
                    teacher=teacher,
                    cache=cache if objective is Objective.DAD else None,
                    device=self.device,
                )
                accuracies = {name: top1(student, ds, device=self.device) for name, ds in suites.items()}
                mean = sum(accuracies.values()) / len(accuracies)
                result.scores.setdefault(objective.value, []).append(mean)
                rows.append([objective.value, run_seed, *(repr(a) for a in accuracies.values()), repr(mean)])
                _log.info("%s seed %d: held-out mean %.2f", objective.value, run_seed, mean)

        with result.path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["objective", "seed", *suites, "mean"])
            writer.writerows(rows)

        self.manifest.seed = seed
        self.manifest.outputs = {
            "results": str(result.path),
            "teacher": str(out / "teacher.pt"),
            "vq": str(out / "vq.pt"),
            "cache": str(out / "cache.bin"),
        }
        return result

    def heldout_suites(self, test_set: ImageDataset, kinds: list[CorruptionKind], seed: int) -> dict[str, ImageDataset]:
        severities = parse_severities(self.args.severities)
        suites = {}
        for kind in kinds:
            parts = [corrupt_dataset(test_set, CorruptionSpec(kind, s, seed)) for s in severities]
            suites[kind.value] = ImageDataset.concat(*parts, rekey=True, name=kind.value)
        return suites

    def summary(self, result: ExperimentResult) -> str:
        lines = [
            f"{objective}: median {result.median(objective):.2f} over {len(scores)} seeds "
            f"({', '.join(f'{s:.2f}' for s in scores)})"
            for objective, scores in result.scores.items()
        ]
        verdict = "holds" if result.ordering_holds else "does NOT hold"
        lines.append(f"DAD >= KD >= CE with DAD - CE >= {result.margin:.1f} points: {verdict}")
        lines.append(f"Per-run accuracies written to {result.path}")
        return "\n".join(lines)
