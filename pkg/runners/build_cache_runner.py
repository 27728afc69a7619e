from dataclasses import dataclass
from pathlib import Path

from dadkit.adversary import Augmentation
from dadkit.cache import CacheVerification, build_cache, verify_cache, write_cache
from dadkit.config import parse_bool
from dadkit.data import load_dataset
from dadkit.discretizer import load_discretizer
from dadkit.errors import ConfigError
from dadkit.model import load_classifier
from runners.runner import Runner


@dataclass
class CacheResult:
    path: Path
    records: int
    accepted: int
    samples: int
    verification: CacheVerification | None = None


class BuildCacheRunner(Runner[CacheResult]):
    command = "build-cache"

    def flag_overrides(self) -> dict[str, object]:
        return {
            "seed": self.args.seed,
            "workers": self.args.workers,
            "retries": self.args.retries,
            "keep_rejected": True if self.args.keep_rejected else None,
            "augmentation": self.args.augmentation,
        }

    def output_dir(self) -> Path:
        return Path(self.args.out).parent

    def _int(self, key: str, default: int) -> int:
        try:
            return int(self.value(key, str(default)))
        except ValueError as e:
            raise ConfigError(f"Bad value for {key}: {self.values[key]!r}") from e

    def run(self) -> CacheResult:
        cfg = self.attack_config()
        try:
            augmentation = Augmentation(self.value("augmentation", "gradient"))
            keep_rejected = parse_bool(self.value("keep_rejected", "false"))
        except ValueError as e:
            raise ConfigError(str(e)) from e

        dataset = load_dataset(self.args.data)
        teacher = load_classifier(self.args.teacher, map_location=self.device)
        disc = load_discretizer(self.args.vq, map_location=self.device)
        cache = build_cache(
            dataset,
            teacher,
            disc,
            cfg,
            self.seed,
            batch_size=self._int("cache_batch_size", 64),
            retries=self._int("retries", 1),
            keep_rejected=keep_rejected,
            augmentation=augmentation,
            workers=self._int("workers", 1),
            device=self.device,
        )
        path = write_cache(cache, self.args.out)
        verification = verify_cache(cache, teacher, device=self.device) if self.args.verify else None

        self.manifest.seed = self.seed
        self.manifest.inputs = {"data": str(self.args.data), "teacher": str(self.args.teacher), "vq": str(self.args.vq)}
        self.manifest.outputs = {"cache": str(path)}
        self.manifest.fingerprints = {
            "teacher": cache.header.teacher_fingerprint.hex(),
            "discretizer": cache.header.discretizer_fingerprint.hex(),
        }
        return CacheResult(path, len(cache), len(cache.accepted()), len(dataset), verification)

    def summary(self, result: CacheResult) -> str:
        rate = 100.0 * result.accepted / result.samples if result.samples else 0.0
        lines = [
            f"Cache written to {result.path}: {result.records} records, "
            f"{result.accepted}/{result.samples} accepted ({rate:.1f}%)"
        ]
        if result.verification is not None:
            v = result.verification
            lines.append(
                f"  verification: {v.agreeing}/{v.total} verdicts reproduced, "
                f"{v.accepted_passing}/{v.accepted} accepted records pass the teacher"
            )
        return "\n".join(lines)
