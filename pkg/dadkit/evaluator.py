"""
Top-1 accuracy, mean corruption error and multi-suite robustness reports.

Suite manifests are flat key=value files (read with ``dotenv_values``)::

    # clean test split; corruption suites are generated from it
    BASE=data/test
    # (kind, severity) grid for mCE
    MCE_GRID=gaussian_noise:1-5;blur:1-5;contrast:1-5
    # optional: columns averaged into ``avg`` (default: every suite)
    AVG=fog,pixelate
    SEED=0
    # every other key is a suite: a dataset path, corrupt:<kind>:<severities>
    # or cache:<path> (the accepted images of an adversarial cache)
    clean=data/test
    fog=corrupt:fog:1-5
    pixelate=corrupt:pixelate:3
    dad_aug=cache:runs/cache.bin

Relative paths are resolved against the manifest's directory.
"""
import csv
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import torch
from dotenv import dotenv_values

from dadkit.adversary import AttackConfig, attack
from dadkit.cache import cache_dataset, read_cache
from dadkit.corruptions import CorruptionKind, CorruptionSpec, corrupt_dataset, parse_grid, parse_severities
from dadkit.data import ImageDataset, load_dataset, sequential_batches
from dadkit.errors import ConfigError
from dadkit.model import Classifier, predict

_log = logging.getLogger(__name__)

RESERVED_KEYS = ("BASE", "MCE_GRID", "AVG", "SEED")


def _check_nonempty(dataset: ImageDataset) -> None:
    if len(dataset) == 0:
        raise ValueError(f"Cannot evaluate on an empty dataset ({dataset.name or 'unnamed'})")


def _count_correct(model: Classifier, dataset: ImageDataset, batch_size: int, device) -> int:
    was_training = model.training
    model.eval()
    try:
        correct = 0
        for images, labels, _ in sequential_batches(dataset, batch_size):
            correct += int((predict(model, images.to(device)) == labels.to(device)).sum())
        return correct
    finally:
        model.train(was_training)


def top1(model: Classifier, dataset: ImageDataset, *, batch_size: int = 256, device: torch.device | str = "cpu") -> float:
    """Percent of samples whose argmax prediction equals the label."""
    _check_nonempty(dataset)
    return 100.0 * _count_correct(model, dataset, batch_size, device) / len(dataset)


def error_rate(model: Classifier, dataset: ImageDataset, *, batch_size: int = 256, device="cpu") -> float:
    _check_nonempty(dataset)
    return (len(dataset) - _count_correct(model, dataset, batch_size, device)) / len(dataset)


ErrorTable = dict[tuple[CorruptionKind, int], float]


def error_table(
    model: Classifier,
    dataset: ImageDataset,
    grid: Iterable[CorruptionSpec],
    *,
    batch_size: int = 256,
    device="cpu",
) -> ErrorTable:
    return {
        (spec.kind, spec.severity): error_rate(model, corrupt_dataset(dataset, spec), batch_size=batch_size, device=device)
        for spec in grid
    }


@dataclass(frozen=True)
class MceResult:
    value: float
    per_kind: dict[CorruptionKind, float | None]


def mce_from_errors(model_errors: Mapping[tuple, float], baseline_errors: Mapping[tuple, float]) -> MceResult:
    """
    Mean over kinds of sum_s err(model) / sum_s err(baseline) * 100.
    Kinds where the baseline never errs are undefined and left out of the mean.
    """
    if set(model_errors) != set(baseline_errors):
        raise ValueError("Model and baseline must be evaluated on the same (kind, severity) grid")
    kinds = list(dict.fromkeys(kind for kind, _ in model_errors))
    per_kind: dict = {}
    for kind in kinds:
        keys = [k for k in model_errors if k[0] == kind]
        denominator = sum(baseline_errors[k] for k in keys)
        if denominator == 0:
            _log.warning("baseline has zero error on %s; mCE term undefined", kind)
            per_kind[kind] = None
            continue
        per_kind[kind] = 100.0 * sum(model_errors[k] for k in keys) / denominator
    defined = [v for v in per_kind.values() if v is not None]
    value = sum(defined) / len(defined) if defined else math.nan
    return MceResult(value=value, per_kind=per_kind)


def mce(
    model: Classifier,
    dataset: ImageDataset,
    grid: Sequence[CorruptionSpec],
    baseline: Classifier,
    *,
    batch_size: int = 256,
    device="cpu",
) -> float:
    model_errors = error_table(model, dataset, grid, batch_size=batch_size, device=device)
    if baseline is model:
        baseline_errors = model_errors
    else:
        baseline_errors = error_table(baseline, dataset, grid, batch_size=batch_size, device=device)
    return mce_from_errors(model_errors, baseline_errors).value


# ---------------------------------------------------------------------------
# Suite manifests and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteSource:
    path: Path | None = None
    corruptions: tuple[CorruptionSpec, ...] = ()
    cache: Path | None = None


@dataclass
class SuiteManifest:
    suites: dict[str, SuiteSource]
    base: Path | None = None
    mce_grid: list[CorruptionSpec] = field(default_factory=list)
    average_over: list[str] = field(default_factory=list)
    seed: int = 0

    @property
    def names(self) -> list[str]:
        return list(self.suites)


def _parse_suite(name: str, raw: str, root: Path, seed: int) -> SuiteSource:
    if raw.startswith("corrupt:"):
        parts = raw.split(":")
        if len(parts) not in (2, 3):
            raise ConfigError(f"Suite {name!r}: expected corrupt:<kind>[:<severities>], got {raw!r}")
        severities = parse_severities(parts[2]) if len(parts) == 3 else [1, 2, 3, 4, 5]
        try:
            specs = tuple(CorruptionSpec(CorruptionKind(parts[1]), s, seed) for s in severities)
        except ValueError as e:
            raise ConfigError(f"Suite {name!r}: {e}") from e
        return SuiteSource(corruptions=specs)
    if raw.startswith("cache:"):
        target = raw.removeprefix("cache:")
        if not target:
            raise ConfigError(f"Suite {name!r}: expected cache:<path>, got {raw!r}")
        cache = Path(target)
        return SuiteSource(cache=cache if cache.is_absolute() else root / cache)
    path = Path(raw)
    return SuiteSource(path=path if path.is_absolute() else root / path)


def load_suite_manifest(path: str | Path) -> SuiteManifest:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Suite manifest not found: {path}")
    values = {k: v for k, v in dotenv_values(path).items() if v is not None}
    root = path.parent
    try:
        seed = int(values.get("SEED", "0"))
    except ValueError as e:
        raise ConfigError(f"Bad SEED in {path}: {values['SEED']!r}") from e
    base = None
    if values.get("BASE"):
        base = Path(values["BASE"])
        base = base if base.is_absolute() else root / base
    try:
        grid = parse_grid(values.get("MCE_GRID", ""), seed)
    except ValueError as e:
        raise ConfigError(f"Bad MCE_GRID in {path}: {e}") from e

    suites = {k: _parse_suite(k, v, root, seed) for k, v in values.items() if k not in RESERVED_KEYS}
    average_over = [s.strip() for s in values.get("AVG", "").split(",") if s.strip()]
    unknown = [s for s in average_over if s not in suites]
    if unknown:
        raise ConfigError(f"AVG names unknown suite(s): {', '.join(unknown)}")
    needs_base = grid or any(s.corruptions for s in suites.values())
    if needs_base and base is None:
        raise ConfigError(f"{path}: corruption suites and MCE_GRID need BASE")
    if not suites:
        raise ConfigError(f"{path}: no suites listed")
    return SuiteManifest(suites=suites, base=base, mce_grid=grid, average_over=average_over, seed=seed)


def materialize(manifest: SuiteManifest, base: ImageDataset | None = None) -> dict[str, ImageDataset]:
    """Load or generate every suite, in manifest order."""
    if base is None and manifest.base is not None:
        base = load_dataset(manifest.base)
    out = {}
    for name, source in manifest.suites.items():
        if source.path is not None:
            out[name] = load_dataset(source.path)
            continue
        if source.cache is not None:
            try:
                out[name] = cache_dataset(read_cache(source.cache), name=name)
            except ValueError as e:
                raise ConfigError(f"Suite {name!r}: {e}") from e
            continue
        parts = [corrupt_dataset(base, spec) for spec in source.corruptions]
        out[name] = parts[0] if len(parts) == 1 else ImageDataset.concat(*parts, rekey=True, name=name)
    return out


@dataclass
class RobustnessReport:
    model: str
    accuracies: dict[str, float]
    average: float
    mce: float | None = None

    @property
    def columns(self) -> list[str]:
        return ["model", *self.accuracies, "avg", "mce"]


def report(
    model: Classifier,
    manifest: SuiteManifest,
    *,
    name: str = "model",
    baseline: Classifier | None = None,
    suites: Mapping[str, ImageDataset] | None = None,
    base: ImageDataset | None = None,
    batch_size: int = 256,
    device="cpu",
    workers: int = 1,
) -> RobustnessReport:
    """Top-1 per suite, their average, and mCE against ``baseline`` when the manifest has a grid."""
    if base is None and manifest.base is not None and (manifest.mce_grid or suites is None):
        base = load_dataset(manifest.base)
    datasets = dict(suites) if suites is not None else materialize(manifest, base)
    names = manifest.names

    def score(suite_name: str) -> float:
        return top1(model, datasets[suite_name], batch_size=batch_size, device=device)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score, names))
    else:
        scores = [score(n) for n in names]
    accuracies = dict(zip(names, scores))

    averaged = manifest.average_over or names
    average = sum(accuracies[n] for n in averaged) / len(averaged)

    mce_value = None
    if manifest.mce_grid and baseline is not None:
        mce_value = mce(model, base, manifest.mce_grid, baseline, batch_size=batch_size, device=device)
    _log.info("%s: avg=%.2f mce=%s", name, average, "n/a" if mce_value is None else f"{mce_value:.2f}")
    return RobustnessReport(model=name, accuracies=accuracies, average=average, mce=mce_value)


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_report_csv(reports: Sequence[RobustnessReport], path: str | Path) -> Path:
    """Columns: model, one column per suite in manifest order, avg, mce."""
    if not reports:
        raise ValueError("No reports to write")
    columns = reports[0].columns
    for r in reports[1:]:
        if r.columns != columns:
            raise ValueError(f"Report for {r.model!r} has columns {r.columns}, expected {columns}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for r in reports:
            writer.writerow([r.model, *(_fmt(v) for v in r.accuracies.values()), _fmt(r.average), _fmt(r.mce)])
    return path


def read_report_csv(path: str | Path) -> list[RobustnessReport]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        suites = header[1:-2]
        for row in reader:
            out.append(
                RobustnessReport(
                    model=row[0],
                    accuracies={s: float(v) for s, v in zip(suites, row[1:-2])},
                    average=float(row[-2]),
                    mce=float(row[-1]) if row[-1] else None,
                )
            )
    return out


# ---------------------------------------------------------------------------
# Adversarial accuracy
# ---------------------------------------------------------------------------


def fgsm_config(epsilon: float) -> AttackConfig:
    return AttackConfig(epsilon=epsilon, steps=1, step_size=epsilon)


def pgd_config(epsilon: float, steps: int = 10, step_size: float | None = None) -> AttackConfig:
    return AttackConfig(epsilon=epsilon, steps=steps, step_size=step_size or 2.5 * epsilon / steps)


def adversarial_accuracy(
    model: Classifier,
    dataset: ImageDataset,
    cfg: AttackConfig,
    *,
    batch_size: int = 256,
    device: torch.device | str = "cpu",
) -> float:
    """Top-1 on pixel-space adversarial examples crafted against ``model`` itself."""
    _check_nonempty(dataset)
    was_training = model.training
    model.eval()
    correct = 0
    try:
        for images, labels, _ in sequential_batches(dataset, batch_size):
            images, labels = images.to(device), labels.to(device)
            x_adv = attack(model, images, labels, cfg)
            correct += int((predict(model, x_adv) == labels).sum())
    finally:
        model.train(was_training)
    return 100.0 * correct / len(dataset)
