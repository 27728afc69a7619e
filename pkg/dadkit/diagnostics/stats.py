"""Per-channel Gaussian statistics collected at the inputs of BatchNorm layers."""
import logging

import numpy as np
import torch
from torch import nn

from dadkit.data import ImageDataset, sequential_batches
from dadkit.diagnostics.distributions import GaussianStats
from dadkit.errors import UnsupportedModelError

_log = logging.getLogger(__name__)

DEFAULT_BATCHES = 1000


class _Moments:
    def __init__(self):
        self.count = 0
        self.total: torch.Tensor | None = None
        self.total_sq: torch.Tensor | None = None

    def update(self, activations: torch.Tensor) -> None:
        # [B, C, ...] -> per-channel sums over every other axis, in float64.
        x = activations.detach().double().transpose(0, 1).reshape(activations.shape[1], -1)
        total, total_sq = x.sum(dim=1).cpu(), (x * x).sum(dim=1).cpu()
        if self.total is None:
            self.total, self.total_sq = total, total_sq
        else:
            self.total += total
            self.total_sq += total_sq
        self.count += x.shape[1]

    def result(self) -> tuple[np.ndarray, np.ndarray]:
        mean = self.total / self.count
        var = (self.total_sq / self.count - mean * mean).clamp_min(0.0)
        return mean.numpy(), var.numpy()


@torch.no_grad()
def bn_stats(
    model: nn.Module,
    dataset: ImageDataset,
    n_batches: int = DEFAULT_BATCHES,
    *,
    batch_size: int = 64,
    device: torch.device | str = "cpu",
) -> GaussianStats:
    """
    Mean and (population) variance per channel of the model input and of the
    input to every BatchNorm layer, pooled over exactly ``n_batches`` batches.
    Batches are taken in dataset order, wrapping around when the data runs out.
    """
    if n_batches < 1:
        raise ValueError(f"n_batches must be >= 1, got {n_batches}")
    if len(dataset) == 0:
        raise ValueError("Cannot collect statistics on an empty dataset")
    norms = [(name, m) for name, m in model.named_modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    if not norms:
        raise UnsupportedModelError(f"{type(model).__name__} has no BatchNorm layers to collect statistics from")

    moments = {"input": _Moments(), **{name: _Moments() for name, _ in norms}}
    handles = [
        module.register_forward_hook(lambda _m, inputs, _out, name=name: moments[name].update(inputs[0]))
        for name, module in norms
    ]
    was_training = model.training
    model.eval()
    try:
        seen = 0
        while seen < n_batches:
            for images, _, _ in sequential_batches(dataset, batch_size):
                images = images.to(device)
                moments["input"].update(images)
                model(images)
                seen += 1
                if seen == n_batches:
                    break
    finally:
        for handle in handles:
            handle.remove()
        model.train(was_training)

    names = tuple(moments)
    _log.debug("collected statistics for %d layers over %d batches", len(names), n_batches)
    return GaussianStats(layers=tuple(moments[n].result() for n in names), batch_count=n_batches, names=names)
