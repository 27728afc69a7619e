"""
Deterministic image corruptions for shifted evaluation splits.

Every kind has a fixed five-step severity table. ``corrupt`` is a pure
function of (image, spec): all randomness is drawn from a generator seeded
with ``spec.seed``.
"""
import enum
import io
import math
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from PIL import Image
from torchvision.transforms import functional as TF

from dadkit.data import ImageDataset
from dadkit.utils import derive_seed, make_generator


class CorruptionKind(enum.StrEnum):
    GAUSSIAN_NOISE = "gaussian_noise"
    BLUR = "blur"
    CONTRAST = "contrast"
    FOG = "fog"
    PIXELATE = "pixelate"
    JPEG_LIKE = "jpeg_like"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            normalized = value.strip().lower().replace("-", "_")
            for member in cls:
                if member.value == normalized:
                    return member
        return None


# Per-kind parameter for severities 1..5.
SEVERITY_TABLE: dict[CorruptionKind, tuple[float, ...]] = {
    CorruptionKind.GAUSSIAN_NOISE: (0.04, 0.08, 0.12, 0.18, 0.26),  # noise sigma
    CorruptionKind.BLUR: (0.4, 0.6, 0.8, 1.0, 1.5),  # gaussian kernel sigma, pixels
    CorruptionKind.CONTRAST: (0.75, 0.5, 0.4, 0.3, 0.15),  # contrast factor
    CorruptionKind.FOG: (0.2, 0.35, 0.5, 0.7, 0.9),  # fog blend strength
    CorruptionKind.PIXELATE: (0.9, 0.8, 0.7, 0.6, 0.5),  # downscale ratio
    CorruptionKind.JPEG_LIKE: (80, 65, 50, 35, 20),  # JPEG quality
}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind
    severity: int
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", CorruptionKind(self.kind))
        except ValueError:
            raise ValueError(f"Unknown corruption kind: {self.kind!r}") from None
        if isinstance(self.severity, bool) or not isinstance(self.severity, int) or not 1 <= self.severity <= 5:
            raise ValueError(f"Severity must be an integer in 1..5, got {self.severity!r}")

    @property
    def label(self) -> str:
        return f"{self.kind.value}-{self.severity}"


def gaussian_noise(image: torch.Tensor, sigma: float, generator: torch.Generator) -> torch.Tensor:
    noise = torch.randn(image.shape, generator=generator, dtype=image.dtype)
    return image + sigma * noise


def blur(image: torch.Tensor, sigma: float) -> torch.Tensor:
    radius = max(1, math.ceil(3 * sigma))
    return TF.gaussian_blur(image, kernel_size=[2 * radius + 1] * 2, sigma=[sigma, sigma])


def contrast(image: torch.Tensor, factor: float) -> torch.Tensor:
    mean = image.mean()
    return (image - mean) * factor + mean


def fog(image: torch.Tensor, strength: float, generator: torch.Generator) -> torch.Tensor:
    _, h, w = image.shape
    coarse = torch.rand((1, 1, 4, 4), generator=generator, dtype=image.dtype)
    fog_map = F.interpolate(coarse, size=(h, w), mode="bilinear", align_corners=False)[0]
    fog_map = (fog_map - fog_map.min()) / (fog_map.max() - fog_map.min()).clamp_min(1e-8)
    return (image + strength * fog_map) / (1 + strength)


def pixelate(image: torch.Tensor, ratio: float) -> torch.Tensor:
    _, h, w = image.shape
    small = (max(1, int(h * ratio)), max(1, int(w * ratio)))
    down = F.interpolate(image[None], size=small, mode="area")
    return F.interpolate(down, size=(h, w), mode="nearest")[0]


def jpeg_like(image: torch.Tensor, quality: int) -> torch.Tensor:
    pixels = (image.clamp(0, 1) * 255).round().to(torch.uint8)
    mode = "L" if pixels.shape[0] == 1 else "RGB"
    array = pixels[0].numpy() if mode == "L" else pixels.permute(1, 2, 0).numpy()
    buf = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as decoded:
        return TF.to_tensor(decoded.convert(mode)).to(image.dtype)


def corrupt(
    image: torch.Tensor,
    spec: CorruptionSpec,
    table: Mapping[CorruptionKind, Sequence[float]] | None = None,
) -> torch.Tensor:
    """Apply one corruption; output has the input's shape and lies in [0, 1]."""
    if image.dim() != 3:
        raise ValueError(f"Expected an image [C, H, W], got shape {tuple(image.shape)}")
    if image.numel() and (image.min() < 0 or image.max() > 1):
        raise ValueError("Image values must lie in [0, 1]")
    param = (table or SEVERITY_TABLE)[spec.kind][spec.severity - 1]
    g = make_generator(spec.seed)

    match spec.kind:
        case CorruptionKind.GAUSSIAN_NOISE:
            out = gaussian_noise(image, param, g)
        case CorruptionKind.BLUR:
            out = blur(image, param) if param > 0 else image.clone()
        case CorruptionKind.CONTRAST:
            out = contrast(image, param)
        case CorruptionKind.FOG:
            out = fog(image, param, g)
        case CorruptionKind.PIXELATE:
            out = pixelate(image, param)
        case CorruptionKind.JPEG_LIKE:
            out = jpeg_like(image, int(param))
    return out.clamp(0, 1)


def corrupt_dataset(dataset: ImageDataset, spec: CorruptionSpec) -> ImageDataset:
    """Corrupt every image; per-sample seeds come from (spec.seed, kind, severity, id)."""

    def apply(ex):
        sample_spec = CorruptionSpec(spec.kind, spec.severity, derive_seed(spec.seed, spec.label, ex.id))
        return corrupt(ex.image, sample_spec)

    return dataset.map_images(apply, name=f"{dataset.name}:{spec.label}")


def with_corruptions(
    dataset: ImageDataset,
    kinds: Iterable[CorruptionKind | str],
    severities: Iterable[int] = (1, 2, 3, 4, 5),
    seed: int = 0,
) -> ImageDataset:
    """Clean ∪ corrupted copies, with fresh unique ids (diverse-teacher training data)."""
    severities = list(severities)
    parts = [dataset]
    for kind in kinds:
        for severity in severities:
            parts.append(corrupt_dataset(dataset, CorruptionSpec(CorruptionKind(kind), severity, seed)))
    return ImageDataset.concat(*parts, rekey=True, name=f"{dataset.name}+corrupted")


def parse_severities(text: str) -> list[int]:
    """``"3"``, ``"1-5"`` or ``"1,3,5"``."""
    text = text.strip()
    if re.fullmatch(r"\d+-\d+", text):
        lo, hi = (int(v) for v in text.split("-"))
        return list(range(lo, hi + 1))
    return [int(v) for v in text.split(",") if v.strip()]


def parse_grid(text: str, seed: int = 0) -> list[CorruptionSpec]:
    """``"gaussian_noise:1-5;blur:2,4"`` -> specs in the written order."""
    specs = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        kind, _, sev = part.partition(":")
        for severity in parse_severities(sev or "1-5"):
            specs.append(CorruptionSpec(CorruptionKind(kind), severity, seed))
    return specs


def load_corruption_manifest(path: str | Path, seed: int = 0) -> list[CorruptionSpec]:
    """
    Flat text manifest, one ``kind severity`` pair per line (``#`` comments).
    ``kind 1-5`` expands to several severities.
    """
    specs = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(":", 1) if ":" in line else line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'kind severity', got {raw!r}")
        kind, severities = (p.strip() for p in parts)
        for severity in parse_severities(severities):
            specs.append(CorruptionSpec(CorruptionKind(kind), severity, seed))
    return specs
