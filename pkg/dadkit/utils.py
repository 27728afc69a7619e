import hashlib
from collections.abc import Mapping

import torch
from torch import nn


def derive_seed(*parts: int | str) -> int:
    """
    Derive an unsigned 64-bit seed from an ordered tuple of parts.
    derive_seed(seed, sample_id) is what makes per-sample work order-independent.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def stable_id(text: str) -> int:
    return derive_seed("id", text)


def make_generator(seed: int, device: torch.device | str = "cpu") -> torch.Generator:
    g = torch.Generator(device=device)
    g.manual_seed(seed & 0xFFFF_FFFF_FFFF_FFFF)
    return g


def module_fingerprint(module: nn.Module) -> bytes:
    """sha256 over parameter/buffer names and raw bytes, in state_dict order."""
    h = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        h.update(name.encode("utf-8"))
        t = tensor.detach().to("cpu").contiguous()
        h.update(str(tuple(t.shape)).encode("ascii"))
        h.update(str(t.dtype).encode("ascii"))
        h.update(t.numpy().tobytes())
    return h.digest()


def mapping_fingerprint(values: Mapping[str, object]) -> str:
    lines = "\n".join(f"{k}={values[k]}" for k in sorted(values))
    return hashlib.sha256(lines.encode("utf-8")).hexdigest()


def resolve_device(name: str | None = None) -> torch.device:
    if name:
        return torch.device(name)
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")
