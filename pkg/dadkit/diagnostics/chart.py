"""(Wasserstein distance, accuracy) pairs relating distribution shift to performance."""
import csv
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

from dadkit.data import ImageDataset
from dadkit.diagnostics.stats import DEFAULT_BATCHES, bn_stats
from dadkit.diagnostics.transport import wasserstein_gaussian
from dadkit.evaluator import top1
from dadkit.model import Classifier

COLUMNS = ["model", "suite", "wasserstein", "accuracy"]


@dataclass(frozen=True)
class ChartRow:
    model: str
    suite: str
    wasserstein: float
    accuracy: float


def chart_data(
    models: Mapping[str, Classifier],
    clean: ImageDataset,
    suites: Mapping[str, ImageDataset],
    *,
    n_batches: int = DEFAULT_BATCHES,
    batch_size: int = 64,
    device="cpu",
) -> list[ChartRow]:
    """One row per (model, suite), sorted by model then suite name."""
    rows = []
    for model_name in sorted(models):
        model = models[model_name]
        reference = bn_stats(model, clean, n_batches, batch_size=batch_size, device=device)
        for suite_name in sorted(suites):
            dataset = suites[suite_name]
            stats = bn_stats(model, dataset, n_batches, batch_size=batch_size, device=device)
            rows.append(
                ChartRow(
                    model=model_name,
                    suite=suite_name,
                    wasserstein=wasserstein_gaussian(reference, stats),
                    accuracy=top1(model, dataset, batch_size=batch_size, device=device),
                )
            )
    return rows


def write_chart_csv(rows: list[ChartRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for r in rows:
            writer.writerow([r.model, r.suite, repr(r.wasserstein), repr(r.accuracy)])
    return path


def read_chart_csv(path: str | Path) -> list[ChartRow]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            ChartRow(row["model"], row["suite"], float(row["wasserstein"]), float(row["accuracy"]))
            for row in csv.DictReader(fh)
        ]
