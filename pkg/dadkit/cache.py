"""
Offline cache of discretized adversarial examples.

Binary layout (all integers little-endian)::

    header:
        magic           8s   b"DADCACHE"
        version         u16
        teacher_fp      32s  sha256 of the teacher state_dict
        discretizer_fp  32s  sha256 of the discretizer state_dict
        epsilon         f64
        steps           u32
        step_size       f64
        norm            u8   0 = l-inf, 2 = l2
        seed            u64  global generation seed
        augmentation    u8   0 = gradient, 1 = sample
        retries         u16
        keep_rejected   u8
        record_count    u64
    record (repeated record_count times, sorted by sample_id):
        sample_id       u64
        accepted        u8
        label           u16
        seed            u64  per-sample generation seed
        ndim            u8, then ndim x u32 shape, then prod(shape) x f32 image
        n               u32, then n x f32 teacher logits on Q(x')
        n               u32, then n x f32 teacher logits on x
"""
import io
import logging
import os
import struct
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from dadkit import discretizer as discretizer_mod
from dadkit import model as model_mod
from dadkit.adversary import (
    AdversarialRecord,
    AttackConfig,
    Augmentation,
    Norm,
    dad_generate_batch,
)
from dadkit.data import ImageDataset
from dadkit.discretizer import Discretizer
from dadkit.errors import CacheFormatError
from dadkit.model import Classifier, predict
from dadkit.utils import derive_seed

_log = logging.getLogger(__name__)

MAGIC = b"DADCACHE"
VERSION = 1

_HEADER = struct.Struct("<8sH32s32sdIdBQBHBQ")
_RECORD = struct.Struct("<QBHQ")
_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")

_NORM_CODES = {Norm.LINF: 0, Norm.L2: 2}
_AUG_CODES = {Augmentation.GRADIENT: 0, Augmentation.SAMPLE: 1}


@dataclass(frozen=True)
class CacheHeader:
    teacher_fingerprint: bytes
    discretizer_fingerprint: bytes
    attack: AttackConfig
    seed: int
    augmentation: Augmentation = Augmentation.GRADIENT
    retries: int = 1
    keep_rejected: bool = False
    version: int = VERSION


@dataclass
class CacheFile:
    header: CacheHeader
    records: list[AdversarialRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def accepted(self) -> list[AdversarialRecord]:
        return [r for r in self.records if r.accepted]

    @property
    def acceptance_rate(self) -> float:
        return len(self.accepted()) / len(self.records) if self.records else 0.0


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _f32(t: torch.Tensor) -> bytes:
    return t.detach().cpu().numpy().astype("<f4", copy=False).tobytes()


def encode_cache(cache: CacheFile) -> bytes:
    h = cache.header
    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(
            MAGIC,
            h.version,
            h.teacher_fingerprint,
            h.discretizer_fingerprint,
            float(h.attack.epsilon),
            h.attack.steps,
            float(h.attack.step_size),
            _NORM_CODES[h.attack.norm],
            h.seed,
            _AUG_CODES[h.augmentation],
            h.retries,
            int(h.keep_rejected),
            len(cache.records),
        )
    )
    for r in cache.records:
        buf.write(_RECORD.pack(r.sample_id, int(r.accepted), r.label, r.seed))
        shape = tuple(r.image.shape)
        buf.write(_U8.pack(len(shape)))
        buf.write(struct.pack(f"<{len(shape)}I", *shape))
        buf.write(_f32(r.image))
        for vec in (r.teacher_logits_aug, r.teacher_logits_clean):
            buf.write(_U32.pack(vec.numel()))
            buf.write(_f32(vec))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.view = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.view):
            raise CacheFormatError(f"Truncated cache: wanted {n} bytes at offset {self.pos}")
        chunk = self.view[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, s: struct.Struct) -> tuple:
        return s.unpack(self.take(s.size))

    def floats(self, n: int) -> torch.Tensor:
        return torch.from_numpy(np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32))


def decode_cache(data: bytes) -> CacheFile:
    reader = _Reader(data)
    (magic, version, t_fp, d_fp, eps, steps, step_size, norm, seed, aug, retries, keep, count) = reader.unpack(_HEADER)
    if magic != MAGIC:
        raise CacheFormatError(f"Bad magic {magic!r}; not a cache file")
    if version != VERSION:
        raise CacheFormatError(f"Unsupported cache version {version}")
    norms = {v: k for k, v in _NORM_CODES.items()}
    augs = {v: k for k, v in _AUG_CODES.items()}
    if norm not in norms or aug not in augs:
        raise CacheFormatError(f"Unknown norm/augmentation code {norm}/{aug}")
    header = CacheHeader(
        teacher_fingerprint=bytes(t_fp),
        discretizer_fingerprint=bytes(d_fp),
        attack=AttackConfig(epsilon=eps, steps=steps, step_size=step_size, norm=norms[norm]),
        seed=seed,
        augmentation=augs[aug],
        retries=retries,
        keep_rejected=bool(keep),
        version=version,
    )
    records = []
    for _ in range(count):
        sample_id, accepted, label, rec_seed = reader.unpack(_RECORD)
        (ndim,) = reader.unpack(_U8)
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        image = reader.floats(int(np.prod(shape))).view(*shape)
        vectors = []
        for _ in range(2):
            (n,) = reader.unpack(_U32)
            vectors.append(reader.floats(n))
        records.append(
            AdversarialRecord(
                sample_id=sample_id,
                label=label,
                image=image,
                teacher_logits_aug=vectors[0],
                teacher_logits_clean=vectors[1],
                accepted=bool(accepted),
                seed=rec_seed,
            )
        )
    if reader.pos != len(data):
        raise CacheFormatError(f"{len(data) - reader.pos} trailing bytes after {count} records")
    return CacheFile(header=header, records=records)


def write_cache(cache: CacheFile, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_cache(cache))
    os.replace(tmp, path)
    _log.info("wrote %d cache records to %s", len(cache), path)
    return path


def read_cache(path: str | Path) -> CacheFile:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Cache file not found: {path}")
    return decode_cache(path.read_bytes())


def cache_dataset(cache: CacheFile, *, name: str = "cache") -> ImageDataset:
    """The accepted records' discretized images and labels, as a dataset with fresh ids."""
    accepted = cache.accepted()
    if not accepted:
        raise ValueError(f"Cache {name!r} has no accepted records")
    images = torch.stack([r.image for r in accepted])
    num_classes = int(accepted[0].teacher_logits_aug.numel())
    return ImageDataset.from_tensors(images, [r.label for r in accepted], num_classes=num_classes, name=name)


# ---------------------------------------------------------------------------
# Building and checking
# ---------------------------------------------------------------------------


def _generate_chunk(
    dataset: ImageDataset,
    indices: list[int],
    teacher: Classifier,
    disc: Discretizer,
    cfg: AttackConfig,
    seed: int,
    retries: int,
    keep_rejected: bool,
    augmentation: Augmentation,
    device: torch.device,
) -> list[AdversarialRecord]:
    accepted: dict[int, AdversarialRecord] = {}
    rejected: dict[int, AdversarialRecord] = {}
    pending = list(indices)
    for attempt in range(retries):
        if not pending:
            break
        x = dataset.images(pending).to(device)
        y = dataset.labels(pending).to(device)
        ids = [dataset[i].id for i in pending]
        seeds = [derive_seed(seed, sample_id, attempt) for sample_id in ids]
        records = dad_generate_batch(
            teacher,
            disc,
            x,
            y,
            cfg,
            sample_ids=ids,
            seeds=seeds,
            augmentation=augmentation,
            random_start_seeds=seeds if attempt > 0 else None,
        )
        next_pending = []
        for i, record in zip(pending, records):
            if record.accepted:
                accepted[record.sample_id] = record
                rejected.pop(record.sample_id, None)
            else:
                rejected[record.sample_id] = record
                next_pending.append(i)
        pending = next_pending
    out = list(accepted.values())
    if keep_rejected:
        out.extend(rejected.values())
    return out


def build_cache(
    dataset: ImageDataset,
    teacher: Classifier,
    disc: Discretizer,
    cfg: AttackConfig,
    seed: int,
    *,
    batch_size: int = 64,
    retries: int = 1,
    keep_rejected: bool = False,
    augmentation: Augmentation = Augmentation.GRADIENT,
    workers: int = 1,
    device: torch.device | str = "cpu",
) -> CacheFile:
    """
    One generation pass over ``dataset``. Chunks are fixed by ``batch_size``
    and per-sample seeds by (seed, sample_id, attempt), so the result does not
    depend on ``workers``; records are sorted by sample_id.
    """
    if retries < 1:
        raise ValueError(f"retries must be >= 1, got {retries}")
    device = torch.device(device)
    teacher = teacher.to(device).freeze()
    disc = disc.to(device).freeze()

    header = CacheHeader(
        teacher_fingerprint=model_mod.fingerprint(teacher),
        discretizer_fingerprint=discretizer_mod.fingerprint(disc),
        attack=cfg,
        seed=seed,
        augmentation=Augmentation(augmentation),
        retries=retries,
        keep_rejected=keep_rejected,
    )
    chunks = [list(range(s, min(s + batch_size, len(dataset)))) for s in range(0, len(dataset), batch_size)]

    def run(chunk: list[int]) -> list[AdversarialRecord]:
        return _generate_chunk(
            dataset, chunk, teacher, disc, cfg, seed, retries, keep_rejected, header.augmentation, device
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]

    records = sorted((r for part in parts for r in part), key=lambda r: r.sample_id)
    cache = CacheFile(header=header, records=records)
    n_acc = len(cache.accepted())
    _log.info(
        "cache built: %d/%d samples accepted (%.1f%%)",
        n_acc,
        len(dataset),
        100.0 * n_acc / len(dataset) if len(dataset) else 0.0,
    )
    return cache


@dataclass(frozen=True)
class CacheVerification:
    total: int
    agreeing: int
    accepted: int
    accepted_passing: int

    @property
    def agreement(self) -> float:
        return self.agreeing / self.total if self.total else 1.0


@torch.no_grad()
def verify_cache(
    cache: CacheFile | Iterable[AdversarialRecord],
    teacher: Classifier,
    *,
    batch_size: int = 256,
    device: torch.device | str = "cpu",
) -> CacheVerification:
    """Re-run the oracle on every stored image and compare with the stored verdict."""
    records = list(cache)
    teacher = teacher.to(device).eval()
    agreeing = accepted = passing = 0
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        images = torch.stack([r.image for r in chunk]).to(device)
        labels = torch.tensor([r.label for r in chunk], device=device)
        ok = (predict(teacher, images) == labels).tolist()
        for r, verdict in zip(chunk, ok):
            agreeing += int(verdict == r.accepted)
            if r.accepted:
                accepted += 1
                passing += int(verdict)
    return CacheVerification(total=len(records), agreeing=agreeing, accepted=accepted, accepted_passing=passing)


def check_fingerprints(
    cache: CacheFile,
    *,
    teacher: Classifier | None = None,
    disc: Discretizer | None = None,
) -> list[str]:
    """Return (and log) mismatches between the cache header and the given artifacts."""
    problems = []
    if teacher is not None and model_mod.fingerprint(teacher) != cache.header.teacher_fingerprint:
        problems.append("teacher fingerprint differs from the one the cache was built with")
    if disc is not None and discretizer_mod.fingerprint(disc) != cache.header.discretizer_fingerprint:
        problems.append("discretizer fingerprint differs from the one the cache was built with")
    for p in problems:
        _log.warning(p)
    return problems
