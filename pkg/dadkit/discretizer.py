"""
Vector-quantized autoencoder Q: encode -> nearest-codeword quantize -> decode.

Gradients pass the quantization step with the straight-through estimator,
so attacks can differentiate through ``discretize``.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar

import torch
import torch.nn.functional as F
from torch import nn

from dadkit import config as config_mod
from dadkit.data import ImageDataset, epoch_permutation
from dadkit.errors import DivergenceError
from dadkit.utils import derive_seed, make_generator, module_fingerprint

_log = logging.getLogger(__name__)

_NEAREST_CHUNK = 1024


@dataclass(frozen=True)
class DiscretizerConfig:
    KEY_PREFIX: ClassVar[str] = "vq_"

    codebook_size: int = 512
    latent_dim: int = 16
    downsample: int = 4
    hidden: int = 64
    epochs: int = 10
    batch_size: int = 64
    lr: float = 2e-3
    commitment: float = 0.25
    heldout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.codebook_size < 2:
            raise ValueError(f"codebook size K must be >= 2, got {self.codebook_size}")
        f = self.downsample
        if f < 1 or f & (f - 1):
            raise ValueError(f"downsample factor must be a power of two, got {f}")
        if not 0 <= self.heldout_fraction < 1:
            raise ValueError(f"heldout_fraction must be in [0, 1), got {self.heldout_fraction}")

    @classmethod
    def desk(cls, **overrides) -> "DiscretizerConfig":
        return cls(**overrides)

    @classmethod
    def full(cls, **overrides) -> "DiscretizerConfig":
        return cls(**{"codebook_size": 16384, "latent_dim": 4, "downsample": 8, **overrides})


PRESETS = {"desk": DiscretizerConfig.desk, "full": DiscretizerConfig.full}


class Codebook(nn.Module):
    """K codewords of dimension d with per-entry usage counters."""

    def __init__(self, entries: torch.Tensor):
        super().__init__()
        if entries.dim() != 2 or entries.shape[0] < 2:
            raise ValueError(f"Codebook entries must be [K >= 2, d], got {tuple(entries.shape)}")
        if not torch.isfinite(entries).all():
            raise ValueError("Codebook entries must be finite")
        self.entries = nn.Parameter(entries.clone())
        self.register_buffer("usage_counts", torch.zeros(entries.shape[0], dtype=torch.long))

    @classmethod
    def random(cls, size: int, dim: int, generator: torch.Generator | None = None) -> "Codebook":
        return cls(torch.rand((size, dim), generator=generator) * 2 - 1)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def nearest(self, vectors: torch.Tensor) -> torch.Tensor:
        """Index of the nearest entry (squared Euclidean) per row; ties -> lowest index."""
        if vectors.dim() != 2 or vectors.shape[1] != self.dim:
            raise ValueError(f"Expected vectors [N, {self.dim}], got {tuple(vectors.shape)}")
        entries = self.entries.detach()
        out = []
        for start in range(0, vectors.shape[0], _NEAREST_CHUNK):
            chunk = vectors[start : start + _NEAREST_CHUNK].detach()
            dist = (chunk[:, None, :] - entries[None, :, :]).pow(2).sum(-1)
            out.append(torch.argmin(dist, dim=1))
        if not out:
            return torch.zeros(0, dtype=torch.long, device=vectors.device)
        return torch.cat(out)

    @torch.no_grad()
    def record_usage(self, indices: torch.Tensor) -> None:
        self.usage_counts += torch.bincount(indices.flatten(), minlength=self.size).to(self.usage_counts)

    def perplexity(self, counts: torch.Tensor | None = None) -> float:
        counts = (self.usage_counts if counts is None else counts).double()
        total = counts.sum()
        if total == 0:
            return 0.0
        p = counts / total
        p = p[p > 0]
        return float(torch.exp(-(p * p.log()).sum()))

    @torch.no_grad()
    def init_from_range(self, latents: torch.Tensor, generator: torch.Generator | None = None) -> None:
        """Uniform init inside the per-dimension range of ``latents`` [N, d]."""
        lo = latents.min(dim=0).values
        hi = latents.max(dim=0).values
        u = torch.rand(self.entries.shape, generator=generator).to(self.entries)
        self.entries.copy_(lo + u * (hi - lo))

    @torch.no_grad()
    def reseed(self, dead: torch.Tensor, latents: torch.Tensor, generator: torch.Generator | None = None) -> int:
        """Replace entries flagged in ``dead`` [K] bool with random rows of ``latents``."""
        idx = torch.nonzero(dead).flatten()
        if idx.numel() == 0 or latents.shape[0] == 0:
            return 0
        pick = torch.randint(0, latents.shape[0], (idx.numel(),), generator=generator)
        self.entries[idx.to(self.entries.device)] = latents[pick.to(latents.device)].to(self.entries)
        return idx.numel()


class Encoder(nn.Module):
    def __init__(self, in_channels: int, hidden: int, latent_dim: int, downsample: int):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(in_channels, hidden, 3, padding=1), nn.ReLU()]
        for _ in range(int(math.log2(downsample))):
            layers += [nn.Conv2d(hidden, hidden, 4, stride=2, padding=1), nn.ReLU()]
        layers += [nn.Conv2d(hidden, hidden, 3, padding=1), nn.ReLU(), nn.Conv2d(hidden, latent_dim, 1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class Decoder(nn.Module):
    def __init__(self, out_channels: int, hidden: int, latent_dim: int, downsample: int):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(latent_dim, hidden, 3, padding=1), nn.ReLU()]
        for _ in range(int(math.log2(downsample))):
            layers += [nn.ConvTranspose2d(hidden, hidden, 4, stride=2, padding=1), nn.ReLU()]
        layers += [nn.Conv2d(hidden, out_channels, 3, padding=1), nn.Sigmoid()]
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


@dataclass
class DiscretizerReport:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_recon: list[float] = field(default_factory=list)
    heldout_mae: float | None = None
    perplexity: float = 0.0
    reseeded: int = 0
    seconds: float = 0.0


class Discretizer(nn.Module):
    def __init__(self, in_channels: int = 3, *, codebook_size: int = 512, latent_dim: int = 16, downsample: int = 4, hidden: int = 64):
        super().__init__()
        self.in_channels = in_channels
        self.downsample = downsample
        self.hidden = hidden
        self.encoder = Encoder(in_channels, hidden, latent_dim, downsample)
        self.decoder = Decoder(in_channels, hidden, latent_dim, downsample)
        self.codebook = Codebook.random(codebook_size, latent_dim)
        self.report = DiscretizerReport()

    @classmethod
    def from_config(cls, cfg: DiscretizerConfig, in_channels: int = 3) -> "Discretizer":
        return cls(
            in_channels,
            codebook_size=cfg.codebook_size,
            latent_dim=cfg.latent_dim,
            downsample=cfg.downsample,
            hidden=cfg.hidden,
        )

    @property
    def latent_dim(self) -> int:
        return self.codebook.dim

    def freeze(self) -> "Discretizer":
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """(reconstruction, codebook loss, commitment loss, code indices)."""
        z = encode(self, x)
        indices, zq = quantize_grid(self.codebook, z)
        codewords = self.codebook.entries[indices].permute(0, 3, 1, 2)
        codebook_loss = F.mse_loss(codewords, z.detach())
        commitment_loss = F.mse_loss(z, codewords.detach())
        return decode(self, zq), codebook_loss, commitment_loss, indices


def _batched(image: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if image.dim() == 3:
        return image[None], True
    if image.dim() == 4:
        return image, False
    raise ValueError(f"Expected [C, H, W] or [B, C, H, W], got {tuple(image.shape)}")


def encode(disc: Discretizer, image: torch.Tensor) -> torch.Tensor:
    """image [.., C, H, W] -> latent [.., d, H/f, W/f]."""
    x, single = _batched(image)
    f = disc.downsample
    if x.shape[-2] % f or x.shape[-1] % f:
        raise ValueError(f"Spatial dims {tuple(x.shape[-2:])} are not divisible by f={f}")
    if x.shape[1] != disc.in_channels:
        raise ValueError(f"Expected {disc.in_channels} channels, got {x.shape[1]}")
    z = disc.encoder(x)
    return z[0] if single else z


def quantize(codebook: Codebook, latent_vector: torch.Tensor) -> tuple[int, torch.Tensor]:
    """Nearest codeword to a single d-vector."""
    if latent_vector.dim() != 1 or latent_vector.shape[0] != codebook.dim:
        raise ValueError(f"Expected a vector of dimension {codebook.dim}, got shape {tuple(latent_vector.shape)}")
    index = int(codebook.nearest(latent_vector[None])[0])
    return index, codebook.entries.detach()[index]


def quantize_grid(codebook: Codebook, latent: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Quantize every spatial position of ``latent`` [B, d, h, w].
    Returns (indices [B, h, w], straight-through quantized latent [B, d, h, w]).
    """
    z, single = _batched(latent)
    b, d, h, w = z.shape
    if d != codebook.dim:
        raise ValueError(f"Latent has {d} channels, codebook dimension is {codebook.dim}")
    flat = z.permute(0, 2, 3, 1).reshape(-1, d)
    indices = codebook.nearest(flat)
    codewords = codebook.entries.detach()[indices].to(z.dtype).view(b, h, w, d).permute(0, 3, 1, 2)
    zq = z + (codewords - z).detach()
    indices = indices.view(b, h, w)
    return (indices[0], zq[0]) if single else (indices, zq)


def decode(disc: Discretizer, grid: torch.Tensor) -> torch.Tensor:
    z, single = _batched(grid)
    if z.shape[1] != disc.latent_dim:
        raise ValueError(f"Expected a grid with {disc.latent_dim} channels, got shape {tuple(grid.shape)}")
    out = disc.decoder(z).clamp(0, 1)
    return out[0] if single else out


def discretize(disc: Discretizer, image: torch.Tensor) -> torch.Tensor:
    """Q(x) = decode(quantize(encode(x))), straight-through at the quantizer."""
    _, zq = quantize_grid(disc.codebook, encode(disc, image))
    return decode(disc, zq)


@torch.no_grad()
def codes(disc: Discretizer, image: torch.Tensor) -> torch.Tensor:
    indices, _ = quantize_grid(disc.codebook, encode(disc, image))
    return indices


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _split(n: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    order = epoch_permutation(n, derive_seed("vq-split", seed), 0)
    n_held = int(round(n * fraction)) if n > 1 else 0
    return order[n_held:], order[:n_held]


@torch.no_grad()
def reconstruction_mae(disc: Discretizer, dataset: ImageDataset, indices: list[int], batch_size: int = 256) -> float:
    if not indices:
        return float("nan")
    device = next(disc.parameters()).device
    total, count = 0.0, 0
    for start in range(0, len(indices), batch_size):
        x = dataset.images(indices[start : start + batch_size]).to(device)
        total += float((discretize(disc, x) - x).abs().sum())
        count += x.numel()
    return total / count


def train_discretizer(
    dataset: ImageDataset,
    cfg: DiscretizerConfig,
    *,
    device: torch.device | str = "cpu",
) -> Discretizer:
    """
    Fit encoder, decoder and codebook with reconstruction + codebook +
    commitment losses. Entries unused during an epoch are re-seeded to random
    encoder outputs. The held-out MAE and codebook perplexity land in
    ``disc.report``.
    """
    if len(dataset) == 0:
        raise ValueError("Cannot train a discretizer on an empty dataset")

    torch.manual_seed(cfg.seed & 0x7FFF_FFFF_FFFF_FFFF)
    g = make_generator(derive_seed("vq", cfg.seed))
    disc = Discretizer.from_config(cfg, in_channels=dataset.image_shape[0]).to(device)
    train_idx, held_idx = _split(len(dataset), cfg.heldout_fraction, cfg.seed)
    if not train_idx:
        train_idx, held_idx = held_idx, []

    with torch.no_grad():
        first = dataset.images(train_idx[: cfg.batch_size]).to(device)
        z = encode(disc, first)
        disc.codebook.init_from_range(z.permute(0, 2, 3, 1).reshape(-1, disc.latent_dim), g)

    optimizer = torch.optim.Adam(disc.parameters(), lr=cfg.lr)
    report = DiscretizerReport()
    started = time.perf_counter()

    for epoch in range(cfg.epochs):
        disc.train()
        epoch_counts = torch.zeros(disc.codebook.size, dtype=torch.long, device=device)
        losses, recons = [], []
        last_latents = None
        order = epoch_permutation(len(train_idx), derive_seed("vq-epoch", cfg.seed), epoch)
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            x = dataset.images([train_idx[i] for i in order[start : start + cfg.batch_size]]).to(device)
            recon, codebook_loss, commitment_loss, indices = disc(x)
            recon_loss = F.mse_loss(recon, x)
            loss = recon_loss + codebook_loss + cfg.commitment * commitment_loss
            if not torch.isfinite(loss):
                raise DivergenceError(f"Discretizer loss became {loss.item()}", epoch=epoch, batch=b)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()

            epoch_counts += torch.bincount(indices.flatten(), minlength=disc.codebook.size)
            disc.codebook.record_usage(indices)
            losses.append(float(loss))
            recons.append(float(recon_loss))
            with torch.no_grad():
                last_latents = encode(disc, x).permute(0, 2, 3, 1).reshape(-1, disc.latent_dim)

        if epoch < cfg.epochs - 1 and last_latents is not None:
            report.reseeded += disc.codebook.reseed(epoch_counts == 0, last_latents, g)

        report.epoch_losses.append(sum(losses) / len(losses))
        report.epoch_recon.append(sum(recons) / len(recons))
        _log.info(
            "vq epoch %d: loss=%.5f recon=%.5f perplexity=%.1f",
            epoch,
            report.epoch_losses[-1],
            report.epoch_recon[-1],
            disc.codebook.perplexity(epoch_counts),
        )

    disc.eval()
    report.heldout_mae = reconstruction_mae(disc, dataset, held_idx) if held_idx else None
    report.perplexity = disc.codebook.perplexity()
    report.seconds = time.perf_counter() - started
    disc.report = report
    _log.info("vq held-out MAE=%s perplexity=%.1f", report.heldout_mae, report.perplexity)
    return disc


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_discretizer(disc: Discretizer, path: str | Path, *, cfg: DiscretizerConfig | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "downsample": disc.downsample,
            "latent_dim": disc.latent_dim,
            "codebook_size": disc.codebook.size,
            "hidden": disc.hidden,
            "in_channels": disc.in_channels,
            "state_dict": disc.state_dict(),
            "config_hash": config_mod.fingerprint(cfg) if cfg else "",
            "report": disc.report.__dict__,
        },
        path,
    )
    return path


def load_discretizer(path: str | Path, map_location: str | torch.device = "cpu") -> Discretizer:
    blob = torch.load(Path(path), map_location=map_location, weights_only=False)
    disc = Discretizer(
        blob["in_channels"],
        codebook_size=blob["codebook_size"],
        latent_dim=blob["latent_dim"],
        downsample=blob["downsample"],
        hidden=blob["hidden"],
    )
    disc.load_state_dict(blob["state_dict"])
    disc.report = DiscretizerReport(**blob.get("report", {}))
    return disc.freeze()


def fingerprint(disc: Discretizer) -> bytes:
    return module_fingerprint(disc)
