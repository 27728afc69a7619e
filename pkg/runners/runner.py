import json
import logging
import sys
import time
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Generic, TypeVar

import torch

import dadkit
from dadkit import config as config_mod
from dadkit.adversary import AttackConfig
from dadkit.discretizer import PRESETS, DiscretizerConfig
from dadkit.errors import ConfigError
from dadkit.model import Classifier, build_classifier
from dadkit.objectives import DistillConfig
from dadkit.trainer import TrainConfig
from dadkit.utils import derive_seed

T = TypeVar("T")

_log = logging.getLogger(__name__)

CONFIG_CLASSES = (DiscretizerConfig, AttackConfig, DistillConfig, TrainConfig)


@dataclass
class RunManifest:
    command: str
    argv: list[str] = field(default_factory=list)
    config: dict[str, str] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    fingerprints: dict[str, str] = field(default_factory=dict)
    started_at: str = ""
    seconds: float = 0.0
    versions: dict[str, str] = field(default_factory=dict)

    def write(self, directory: str | Path) -> Path:
        path = Path(directory) / f"{self.command}.manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def parse_named_paths(items: list[str] | None, flag: str) -> dict[str, Path]:
    """
    "name=path" pairs -> {name: path}; a bare path is named after its stem.
    Names keep the order they were given in.
    """
    out: dict[str, Path] = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        if not name or not path:
            raise ConfigError(f"{flag}: expected name=path, got {item!r}")
        if name in out:
            raise ConfigError(f"{flag}: duplicate name {name!r}")
        out[name] = Path(path)
    return out


class Runner(ABC, Generic[T]):
    """
    One pipeline stage. ``run`` does the work and returns its result,
    ``summary`` renders it for the terminal; ``execute`` wraps both and
    writes the manifest next to the outputs.
    """

    command: str = ""

    def __init__(self, args, *, home: Path, device: torch.device):
        self.args = args
        self.home = home
        self.device = device
        self.values = self.load_values()
        self.manifest = RunManifest(command=self.command, argv=list(getattr(args, "argv", sys.argv[1:])))

    # ---- configuration ----

    def load_values(self) -> dict[str, str]:
        """defaults < --config file < --set key=value < dedicated flags."""
        overrides = config_mod.parse_overrides(getattr(self.args, "set", None))
        overrides.update({k: str(v) for k, v in self.flag_overrides().items() if v is not None})
        return config_mod.load_config(
            getattr(self.args, "config", None),
            overrides,
            allowed=config_mod.known_keys(CONFIG_CLASSES),
        )

    def flag_overrides(self) -> dict[str, object]:
        """Config keys set by dedicated flags; subclasses extend."""
        return {"seed": getattr(self.args, "seed", None)}

    def train_config(self) -> TrainConfig:
        return config_mod.parse_config(
            TrainConfig,
            self.values,
            objective=config_mod.parse_config(DistillConfig, self.values),
            attack=self.attack_config(),
        )

    def attack_config(self) -> AttackConfig:
        return config_mod.parse_config(AttackConfig, self.values)

    def discretizer_config(self) -> DiscretizerConfig:
        preset = self.values.get("vq_preset", "desk")
        if preset not in PRESETS:
            raise ConfigError(f"Unknown vq_preset {preset!r}; choose from {sorted(PRESETS)}")
        base = config_mod.render(PRESETS[preset]())
        return config_mod.parse_config(DiscretizerConfig, {**base, **self.values})

    def value(self, key: str, default: str) -> str:
        return self.values.get(key, default)

    def build_model(self, dataset, *, architecture: str | None = None, seed: int | None = None) -> Classifier:
        """Fresh classifier for ``dataset`` from the ``architecture``/``width`` keys, seeded init."""
        architecture = architecture or self.value("architecture", "small")
        kwargs = {}
        if "width" in self.values:
            try:
                width = int(self.values["width"])
            except ValueError as e:
                raise ConfigError(f"Bad value for width: {self.values['width']!r}") from e
            kwargs = {"mlp": {"hidden": width}, "linear": {}}.get(architecture, {"width": width})
        torch.manual_seed(derive_seed("init", self.seed if seed is None else seed) & 0x7FFF_FFFF_FFFF_FFFF)
        try:
            return build_classifier(architecture, dataset.num_classes, dataset.image_shape, **kwargs)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @property
    def seed(self) -> int:
        try:
            return int(self.values.get("seed", "0"))
        except ValueError as e:
            raise ConfigError(f"Bad seed: {self.values['seed']!r}") from e

    # ---- verbs ----

    @abstractmethod
    def run(self) -> T:
        raise NotImplementedError

    @abstractmethod
    def summary(self, result: T) -> str:
        raise NotImplementedError

    def output_dir(self) -> Path:
        return self.home

    def execute(self) -> T:
        started = time.perf_counter()
        self.manifest.started_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
        result = self.run()
        self.manifest.seconds = round(time.perf_counter() - started, 3)
        self.manifest.config = dict(sorted(self.values.items()))
        self.manifest.versions = {"dadkit": dadkit.__version__, "torch": torch.__version__}
        path = self.manifest.write(self.output_dir())
        _log.info("manifest written to %s", path)
        return result
