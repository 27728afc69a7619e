from dataclasses import dataclass
from pathlib import Path

from dadkit.data import export_cifar10, load_dataset, make_synthetic, save_dataset
from dadkit.utils import derive_seed
from runners.runner import Runner


@dataclass
class PreparedData:
    root: Path
    train: int
    test: int
    num_classes: int


class PrepareDataRunner(Runner[PreparedData]):
    """Writes a desk dataset in the class-per-folder layout: <out>/train and <out>/test."""

    command = "prepare-data"

    def output_dir(self) -> Path:
        return Path(self.args.out)

    def run(self) -> PreparedData:
        out = Path(self.args.out)
        seed = self.seed
        if self.args.source == "cifar10":
            download = Path(self.args.download) if self.args.download else self.home / "cifar10"
            export_cifar10(
                download, out, limit_per_class=self.args.per_class, test_limit_per_class=self.args.test_per_class
            )
            self.manifest.inputs["download"] = str(download)
        else:
            train = make_synthetic(
                self.args.classes, self.args.per_class, size=self.args.size, seed=seed, name="train"
            )
            test = make_synthetic(
                self.args.classes,
                self.args.test_per_class,
                size=self.args.size,
                seed=derive_seed("test", seed),
                name="test",
            )
            save_dataset(train, out, "train")
            save_dataset(test, out, "test")

        train, test = load_dataset(out, "train"), load_dataset(out, "test")
        self.manifest.seed = seed
        self.manifest.outputs = {"train": str(out / "train"), "test": str(out / "test")}
        return PreparedData(root=out, train=len(train), test=len(test), num_classes=train.num_classes)

    def summary(self, result: PreparedData) -> str:
        return (
            f"Dataset written to {result.root}: {result.train} train / {result.test} test images, "
            f"{result.num_classes} classes"
        )
