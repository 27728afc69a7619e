from dataclasses import dataclass
from pathlib import Path

from dadkit import config as config_mod
from dadkit import discretizer as discretizer_mod
from dadkit.data import load_dataset
from dadkit.discretizer import DiscretizerReport, save_discretizer, train_discretizer
from runners.runner import Runner


@dataclass
class TrainedDiscretizer:
    path: Path
    codebook_size: int
    latent_dim: int
    downsample: int
    report: DiscretizerReport


class TrainVQRunner(Runner[TrainedDiscretizer]):
    command = "train-vq"

    def flag_overrides(self) -> dict[str, object]:
        return {
            "vq_seed": self.args.seed,
            "vq_epochs": self.args.epochs,
            "vq_preset": self.args.preset,
        }

    def output_dir(self) -> Path:
        return Path(self.args.out).parent

    def run(self) -> TrainedDiscretizer:
        cfg = self.discretizer_config()
        dataset = load_dataset(self.args.data)
        disc = train_discretizer(dataset, cfg, device=self.device)
        path = save_discretizer(disc, self.args.out, cfg=cfg)

        self.manifest.seed = cfg.seed
        self.manifest.inputs = {"data": str(self.args.data)}
        self.manifest.outputs = {"discretizer": str(path)}
        self.manifest.fingerprints = {
            "discretizer": discretizer_mod.fingerprint(disc).hex(),
            "config": config_mod.fingerprint(cfg),
        }
        return TrainedDiscretizer(path, cfg.codebook_size, cfg.latent_dim, cfg.downsample, disc.report)

    def summary(self, result: TrainedDiscretizer) -> str:
        mae = "n/a" if result.report.heldout_mae is None else f"{result.report.heldout_mae:.4f}"
        return (
            f"Discretizer K={result.codebook_size} d={result.latent_dim} f={result.downsample} saved to {result.path}\n"
            f"  held-out MAE: {mae}  perplexity: {result.report.perplexity:.1f}  "
            f"re-seeded codes: {result.report.reseeded}"
        )
