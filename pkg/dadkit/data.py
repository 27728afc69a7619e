"""
Datasets in a class-per-folder layout and the clean/augmented batch stream.

On-disk layout::

    <root>/<split>/<class_name>/<file>.png

Classes are sorted by name and labelled 0..K-1; files are read in sorted
order. A sample id is a 64-bit hash of ``<class_name>/<file>`` so ids survive
reloads and do not depend on how many other files exist.
"""
import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torch.utils.data import Dataset as TorchDataset
from torchvision.transforms import functional as TF

from dadkit.errors import DanglingReferenceError, MalformedRecordError
from dadkit.utils import derive_seed, make_generator, stable_id

_log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm"}


@dataclass(frozen=True)
class LabeledExample:
    image: torch.Tensor  # [C, H, W], values in [0, 1]
    label: int
    id: int


class ImageDataset(TorchDataset):
    """Immutable list of labelled images with unique ids."""

    def __init__(
        self,
        examples: Sequence[LabeledExample],
        *,
        num_classes: int,
        class_names: Sequence[str] | None = None,
        name: str = "",
    ):
        self._examples = tuple(examples)
        self.num_classes = num_classes
        width = len(str(max(num_classes - 1, 0)))
        # Zero-padded so that sorted folder names keep label order on reload.
        self.class_names = tuple(class_names) if class_names else tuple(str(i).zfill(width) for i in range(num_classes))
        self.name = name
        self._index: dict[int, int] = {}
        for i, ex in enumerate(self._examples):
            if ex.id in self._index:
                raise MalformedRecordError(str(ex.id), "duplicate sample id")
            if not 0 <= ex.label < num_classes:
                raise MalformedRecordError(str(ex.id), f"label {ex.label} outside [0, {num_classes})")
            self._index[ex.id] = i

    @classmethod
    def from_tensors(
        cls,
        images: torch.Tensor,
        labels: torch.Tensor | Sequence[int],
        *,
        num_classes: int | None = None,
        ids: Sequence[int] | None = None,
        name: str = "",
    ) -> "ImageDataset":
        labels = [int(v) for v in labels]
        if len(labels) != images.shape[0]:
            raise ValueError(f"{images.shape[0]} images but {len(labels)} labels")
        if ids is None:
            ids = [stable_id(f"{name}/{i}") for i in range(len(labels))]
        if num_classes is None:
            num_classes = max(labels) + 1 if labels else 1
        examples = [
            LabeledExample(image=images[i].detach().float(), label=labels[i], id=int(ids[i]))
            for i in range(len(labels))
        ]
        return cls(examples, num_classes=num_classes, name=name)

    def __len__(self) -> int:
        return len(self._examples)

    def __getitem__(self, i: int) -> LabeledExample:
        return self._examples[i]

    def __iter__(self) -> Iterator[LabeledExample]:
        return iter(self._examples)

    def __contains__(self, sample_id: int) -> bool:
        return sample_id in self._index

    def by_id(self, sample_id: int) -> LabeledExample:
        try:
            return self._examples[self._index[sample_id]]
        except KeyError:
            raise DanglingReferenceError(sample_id) from None

    @property
    def ids(self) -> list[int]:
        return [ex.id for ex in self._examples]

    @property
    def image_shape(self) -> tuple[int, ...] | None:
        return tuple(self._examples[0].image.shape) if self._examples else None

    def images(self, indices: Sequence[int] | None = None) -> torch.Tensor:
        picked = self._examples if indices is None else [self._examples[i] for i in indices]
        if not picked:
            shape = self.image_shape or (0,)
            return torch.empty((0, *shape))
        return torch.stack([ex.image for ex in picked])

    def labels(self, indices: Sequence[int] | None = None) -> torch.Tensor:
        picked = self._examples if indices is None else [self._examples[i] for i in indices]
        return torch.tensor([ex.label for ex in picked], dtype=torch.long)

    def map_images(self, fn, *, name: str | None = None) -> "ImageDataset":
        """New dataset with ``fn(example) -> image`` applied; ids and labels kept."""
        examples = [LabeledExample(image=fn(ex), label=ex.label, id=ex.id) for ex in self._examples]
        return ImageDataset(
            examples, num_classes=self.num_classes, class_names=self.class_names, name=name or self.name
        )

    @staticmethod
    def concat(*datasets: "ImageDataset", rekey: bool = True, name: str = "") -> "ImageDataset":
        """Concatenate; with ``rekey`` ids are re-derived from (dataset name, old id)."""
        if not datasets:
            raise ValueError("concat needs at least one dataset")
        examples = []
        for ds in datasets:
            for ex in ds:
                new_id = derive_seed("concat", ds.name, ex.id) if rekey else ex.id
                examples.append(LabeledExample(image=ex.image, label=ex.label, id=new_id))
        first = datasets[0]
        return ImageDataset(
            examples,
            num_classes=max(ds.num_classes for ds in datasets),
            class_names=first.class_names,
            name=name,
        )


# ---------------------------------------------------------------------------
# Disk I/O
# ---------------------------------------------------------------------------


def load_dataset(source_path: str | Path, split_name: str | None = None) -> ImageDataset:
    """
    Load ``source_path/split_name`` (or ``source_path`` when no split is given).
    An existing directory without class folders is an empty dataset.
    """
    root = Path(source_path)
    if not root.exists():
        raise FileNotFoundError(f"Dataset path not found: {root}")
    split_dir = root / split_name if split_name else root
    if not split_dir.is_dir():
        raise FileNotFoundError(f"Split {split_name!r} not found under {root}")

    class_dirs = sorted(p for p in split_dir.iterdir() if p.is_dir() and not p.name.startswith("."))
    examples: list[LabeledExample] = []
    shape: tuple[int, ...] | None = None

    for label, class_dir in enumerate(class_dirs):
        for path in sorted(p for p in class_dir.iterdir() if not p.name.startswith(".")):
            rel = f"{class_dir.name}/{path.name}"
            if path.is_dir() or path.suffix.lower() not in IMAGE_SUFFIXES:
                raise MalformedRecordError(rel, "not an image file")
            try:
                with Image.open(path) as img:
                    image = TF.to_tensor(img.convert("RGB"))
            except (UnidentifiedImageError, OSError) as e:
                raise MalformedRecordError(rel, f"unreadable image ({e})") from e
            if shape is None:
                shape = tuple(image.shape)
            elif tuple(image.shape) != shape:
                raise MalformedRecordError(rel, f"shape {tuple(image.shape)} differs from {shape}")
            examples.append(LabeledExample(image=image, label=label, id=stable_id(rel)))

    _log.info("loaded %d images in %d classes from %s", len(examples), len(class_dirs), split_dir)
    return ImageDataset(
        examples,
        num_classes=len(class_dirs),
        class_names=[d.name for d in class_dirs],
        name=split_name or root.name,
    )


def save_dataset(dataset: ImageDataset, root: str | Path, split_name: str) -> Path:
    """Write a dataset as PNG files in the class-per-folder layout."""
    split_dir = Path(root) / split_name
    for name in dataset.class_names:
        (split_dir / name).mkdir(parents=True, exist_ok=True)
    for i, ex in enumerate(dataset):
        array = (ex.image.clamp(0, 1) * 255).round().to(torch.uint8).permute(1, 2, 0).numpy()
        if array.shape[2] == 1:
            array = np.repeat(array, 3, axis=2)
        Image.fromarray(array).save(split_dir / dataset.class_names[ex.label] / f"{i:06d}.png")
    return split_dir


def make_synthetic(
    num_classes: int = 10,
    per_class: int = 100,
    *,
    size: int = 32,
    channels: int = 3,
    seed: int = 0,
    name: str = "synthetic",
) -> ImageDataset:
    """
    Procedural class-conditional images: every class owns an oriented grating
    frequency and a colour; samples jitter phase, contrast and add noise.
    """
    g = make_generator(derive_seed("synthetic", seed))
    ys, xs = torch.meshgrid(torch.linspace(0, 1, size), torch.linspace(0, 1, size), indexing="ij")
    images, labels = [], []
    for label in range(num_classes):
        angle = math.pi * label / num_classes
        freq = 3.0 + 2.0 * (label % 3)
        colour = torch.rand(channels, generator=make_generator(derive_seed("colour", label))) * 0.6 + 0.2
        for _ in range(per_class):
            phase = torch.rand((), generator=g) * 2 * math.pi
            contrast = 0.25 + 0.15 * torch.rand((), generator=g)
            wave = torch.sin(2 * math.pi * freq * (xs * math.cos(angle) + ys * math.sin(angle)) + phase)
            img = colour[:, None, None] + contrast * wave[None]
            img = img + 0.05 * torch.randn((channels, size, size), generator=g)
            images.append(img.clamp(0, 1))
            labels.append(label)
    return ImageDataset.from_tensors(torch.stack(images), labels, num_classes=num_classes, name=name)


def export_cifar10(
    download_root: str | Path,
    out_root: str | Path,
    *,
    limit_per_class: int | None = None,
    test_limit_per_class: int | None = None,
) -> None:
    """Write torchvision's CIFAR-10 into ``out_root/{train,test}/<class>/``.

    ``limit_per_class`` caps the train split only; the test split has its own cap.
    """
    from torchvision.datasets import CIFAR10

    for split, train, limit in (("train", True, limit_per_class), ("test", False, test_limit_per_class)):
        ds = CIFAR10(root=str(download_root), train=train, download=True)
        counts: dict[int, int] = {}
        for i, (img, label) in enumerate(ds):
            if limit is not None and counts.get(label, 0) >= limit:
                continue
            counts[label] = counts.get(label, 0) + 1
            class_dir = Path(out_root) / split / ds.classes[label]
            class_dir.mkdir(parents=True, exist_ok=True)
            img.save(class_dir / f"{i:06d}.png")


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    images: torch.Tensor  # [B, C, H, W]
    labels: torch.Tensor  # [B]
    ids: list[int]
    augmented: torch.Tensor  # [B] bool
    # Cached teacher logits for augmented rows; NaN rows for clean elements.
    teacher_logits: torch.Tensor | None = None
    # Cached teacher logits on the clean source of each augmented row.
    teacher_clean_logits: torch.Tensor | None = None
    tags: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def to(self, device: torch.device | str) -> "Batch":
        def move(t):
            return None if t is None else t.to(device)

        return Batch(
            images=self.images.to(device),
            labels=self.labels.to(device),
            ids=self.ids,
            augmented=self.augmented.to(device),
            teacher_logits=move(self.teacher_logits),
            teacher_clean_logits=move(self.teacher_clean_logits),
            tags=self.tags,
        )


def epoch_permutation(n: int, seed: int, epoch: int) -> list[int]:
    if n == 0:
        return []
    return torch.randperm(n, generator=make_generator(derive_seed("epoch", seed, epoch))).tolist()


def shuffled_batches(dataset: ImageDataset, batch_size: int, seed: int, epoch: int = 0) -> Iterator[Batch]:
    """Plain shuffled clean batches; the last partial batch is emitted."""
    return mixed_batches(dataset, (), batch_size, seed, epoch)


def mixed_batches(
    dataset: ImageDataset,
    cache: Sequence,
    batch_size: int,
    seed: int,
    epoch: int = 0,
) -> Iterator[Batch]:
    """
    One epoch over clean samples and accepted cache records, shuffled together.

    ``cache`` is any sequence of records with ``sample_id``, ``image``,
    ``accepted``, ``teacher_logits_aug`` and ``teacher_logits_clean``
    (``AdversarialRecord``). Every clean sample and every accepted record is
    emitted exactly once; the last partial batch is kept.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")

    accepted = [r for r in cache if r.accepted]
    for record in accepted:
        if record.sample_id not in dataset:
            raise DanglingReferenceError(record.sample_id)
    accepted.sort(key=lambda r: r.sample_id)

    n_clean = len(dataset)
    order = epoch_permutation(n_clean + len(accepted), seed, epoch)
    num_classes = dataset.num_classes

    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        images, labels, ids, aug, tags = [], [], [], [], []
        t_aug, t_clean = [], []
        for pos in chunk:
            if pos < n_clean:
                ex = dataset[pos]
                images.append(ex.image)
                labels.append(ex.label)
                ids.append(ex.id)
                aug.append(False)
                tags.append("clean")
                t_aug.append(None)
                t_clean.append(None)
            else:
                record = accepted[pos - n_clean]
                ex = dataset.by_id(record.sample_id)
                images.append(record.image)
                labels.append(ex.label)
                ids.append(record.sample_id)
                aug.append(True)
                tags.append("augmented")
                t_aug.append(record.teacher_logits_aug)
                t_clean.append(record.teacher_logits_clean)

        teacher_logits = teacher_clean_logits = None
        if any(aug):
            nan_row = torch.full((num_classes,), float("nan"))
            teacher_logits = torch.stack([nan_row if t is None else t.float() for t in t_aug])
            teacher_clean_logits = torch.stack([nan_row if t is None else t.float() for t in t_clean])

        yield Batch(
            images=torch.stack(images),
            labels=torch.tensor(labels, dtype=torch.long),
            ids=ids,
            augmented=torch.tensor(aug, dtype=torch.bool),
            teacher_logits=teacher_logits,
            teacher_clean_logits=teacher_clean_logits,
            tags=tags,
        )


def sequential_batches(dataset: ImageDataset, batch_size: int) -> Iterator[tuple[torch.Tensor, torch.Tensor, list[int]]]:
    """Unshuffled (images, labels, ids) chunks in dataset order."""
    for start in range(0, len(dataset), batch_size):
        idx = list(range(start, min(start + batch_size, len(dataset))))
        yield dataset.images(idx), dataset.labels(idx), [dataset[i].id for i in idx]
