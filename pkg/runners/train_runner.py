from dataclasses import dataclass
from pathlib import Path

from dadkit import config as config_mod
from dadkit import model as model_mod
from dadkit.cache import check_fingerprints, read_cache
from dadkit.corruptions import with_corruptions
from dadkit.data import load_dataset
from dadkit.discretizer import load_discretizer
from dadkit.errors import ConfigError
from dadkit.model import load_classifier, save_classifier
from dadkit.trainer import TrainLog, train
from runners.runner import Runner


@dataclass
class TrainResult:
    path: Path
    objective: str
    log: TrainLog
    log_path: Path | None


class TrainRunner(Runner[TrainResult]):
    """
    Trains a student (or, with no teacher and --corrupt, a diverse teacher on
    clean plus corrupted copies of the data) and saves it with its train log.
    """

    command = "train"

    def flag_overrides(self) -> dict[str, object]:
        return {
            "seed": self.args.seed,
            "epochs": self.args.epochs,
            "objective": self.args.objective,
            "architecture": self.args.architecture,
        }

    def output_dir(self) -> Path:
        return Path(self.args.out).parent

    def run(self) -> TrainResult:
        cfg = self.train_config()
        dataset = load_dataset(self.args.data)
        if self.args.corrupt:
            kinds = [k.strip() for k in self.args.corrupt.split(",") if k.strip()]
            try:
                dataset = with_corruptions(dataset, kinds, seed=cfg.seed)
            except ValueError as e:
                raise ConfigError(f"--corrupt: {e}") from e

        teacher = load_classifier(self.args.teacher, map_location=self.device) if self.args.teacher else None
        disc = load_discretizer(self.args.vq, map_location=self.device) if self.args.vq else None
        cache = read_cache(self.args.cache) if self.args.cache else None
        if cache is not None:
            check_fingerprints(cache, teacher=teacher, disc=disc)

        student = self.build_model(dataset)
        student, log = train(student, dataset, cfg, teacher=teacher, cache=cache, discretizer=disc, device=self.device)

        config_hash = config_mod.fingerprint(cfg)
        path = save_classifier(student, self.args.out, config_hash=config_hash)
        log_path = Path(self.args.log) if self.args.log else Path(self.args.out).with_suffix(".log.csv")
        log.write_csv(log_path)

        self.manifest.seed = cfg.seed
        self.manifest.inputs = {
            name: str(value)
            for name, value in (
                ("data", self.args.data),
                ("teacher", self.args.teacher),
                ("cache", self.args.cache),
                ("vq", self.args.vq),
            )
            if value
        }
        self.manifest.outputs = {"model": str(path), "log": str(log_path)}
        self.manifest.fingerprints = {"model": model_mod.fingerprint(student).hex(), "config": config_hash}
        if teacher is not None:
            self.manifest.fingerprints["teacher"] = model_mod.fingerprint(teacher).hex()
        return TrainResult(path, cfg.objective.objective.value, log, log_path)

    def summary(self, result: TrainResult) -> str:
        log = result.log
        return (
            f"Trained {result.objective} model saved to {result.path} (log: {result.log_path})\n"
            f"  final loss: {log.epoch_losses[-1]:.5f}  forward: {log.total_forward}  "
            f"backward: {log.total_backward}  attack steps: {log.total_attack_steps}"
        )
