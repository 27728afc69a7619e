"""
Classifiers for students and teachers plus temperature-scaled probabilities.

All architectures are deterministic in eval mode (no dropout). The conv nets
carry BatchNorm layers so their statistics can be collected for diagnostics.
"""
import logging
from pathlib import Path

import torch
from torch import nn

from dadkit.utils import module_fingerprint

_log = logging.getLogger(__name__)


class Classifier(nn.Module):
    """image batch [B, C, H, W] -> logits [B, num_classes]."""

    architecture = "base"

    def __init__(self, num_classes: int, input_shape: tuple[int, int, int]):
        super().__init__()
        self.num_classes = num_classes
        self.input_shape = tuple(input_shape)
        self.init_kwargs: dict = {"num_classes": num_classes, "input_shape": tuple(input_shape)}

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def freeze(self) -> "Classifier":
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()


class LinearClassifier(Classifier):
    """Multinomial logistic regression on flattened pixels."""

    architecture = "linear"

    def __init__(self, num_classes: int, input_shape: tuple[int, int, int]):
        super().__init__(num_classes, input_shape)
        c, h, w = input_shape
        self.fc = nn.Linear(c * h * w, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(x.flatten(1))


class MLPClassifier(Classifier):
    """Three linear layers with tanh; smooth, so finite differences are well behaved."""

    architecture = "mlp"

    def __init__(self, num_classes: int, input_shape: tuple[int, int, int], hidden: int = 32):
        super().__init__(num_classes, input_shape)
        self.init_kwargs["hidden"] = hidden
        c, h, w = input_shape
        self.net = nn.Sequential(
            nn.Flatten(),
            nn.Linear(c * h * w, hidden),
            nn.Tanh(),
            nn.Linear(hidden, hidden),
            nn.Tanh(),
            nn.Linear(hidden, num_classes),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def _conv_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class SmallConvNet(Classifier):
    """Student: two conv stages and a linear head."""

    architecture = "small"

    def __init__(self, num_classes: int, input_shape: tuple[int, int, int], width: int = 32):
        super().__init__(num_classes, input_shape)
        self.init_kwargs["width"] = width
        c = input_shape[0]
        self.features = nn.Sequential(
            _conv_block(c, width),
            _conv_block(width, width),
            nn.MaxPool2d(2),
            _conv_block(width, 2 * width),
            nn.MaxPool2d(2),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.head = nn.Linear(2 * width, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


class WideConvNet(Classifier):
    """Teacher stand-in: wider and one stage deeper than the student."""

    architecture = "wide"

    def __init__(self, num_classes: int, input_shape: tuple[int, int, int], width: int = 64):
        super().__init__(num_classes, input_shape)
        self.init_kwargs["width"] = width
        c = input_shape[0]
        self.features = nn.Sequential(
            _conv_block(c, width),
            _conv_block(width, width),
            nn.MaxPool2d(2),
            _conv_block(width, 2 * width),
            _conv_block(2 * width, 2 * width),
            nn.MaxPool2d(2),
            _conv_block(2 * width, 4 * width),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.head = nn.Linear(4 * width, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


ARCHITECTURES: dict[str, type[Classifier]] = {
    cls.architecture: cls for cls in (LinearClassifier, MLPClassifier, SmallConvNet, WideConvNet)
}


def build_classifier(architecture: str, num_classes: int, input_shape: tuple[int, int, int], **kwargs) -> Classifier:
    try:
        cls = ARCHITECTURES[architecture]
    except KeyError:
        raise ValueError(f"Unknown architecture {architecture!r}; choose from {sorted(ARCHITECTURES)}") from None
    return cls(num_classes, tuple(input_shape), **kwargs)


# ---------------------------------------------------------------------------
# Readouts
# ---------------------------------------------------------------------------


def logits(model: Classifier, images: torch.Tensor) -> torch.Tensor:
    """Forward pass with shape and finiteness checks; keeps the autograd graph."""
    if images.dim() != 4 or tuple(images.shape[1:]) != model.input_shape:
        raise ValueError(
            f"Expected images [B, {', '.join(map(str, model.input_shape))}], got {tuple(images.shape)}"
        )
    if images.shape[0] == 0:
        p = next(model.parameters())
        return torch.zeros((0, model.num_classes), dtype=p.dtype, device=p.device)
    out = model(images)
    if not torch.isfinite(out).all():
        raise FloatingPointError("Classifier produced non-finite logits")
    return out


def temp_softmax(logit_values: torch.Tensor, t: float) -> torch.Tensor:
    if t <= 0:
        raise ValueError(f"Temperature must be positive, got {t}")
    return torch.softmax(logit_values / t, dim=-1)


def argmax_rows(logit_values: torch.Tensor) -> torch.Tensor:
    # torch.argmax returns the first maximal index, i.e. ties go to the lowest class.
    return torch.argmax(logit_values, dim=-1)


@torch.no_grad()
def predict(model: Classifier, images: torch.Tensor) -> torch.Tensor:
    return argmax_rows(logits(model, images))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_classifier(model: Classifier, path: str | Path, *, config_hash: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "architecture": model.architecture,
            "kwargs": model.init_kwargs,
            "state_dict": model.state_dict(),
            "config_hash": config_hash,
        },
        path,
    )
    _log.info("saved %s classifier to %s", model.architecture, path)
    return path


def load_classifier(path: str | Path, map_location: str | torch.device = "cpu") -> Classifier:
    blob = torch.load(Path(path), map_location=map_location, weights_only=False)
    kwargs = dict(blob["kwargs"])
    model = build_classifier(blob["architecture"], kwargs.pop("num_classes"), kwargs.pop("input_shape"), **kwargs)
    model.load_state_dict(blob["state_dict"])
    model.config_hash = blob.get("config_hash", "")
    return model.eval()


def fingerprint(model: nn.Module) -> bytes:
    return module_fingerprint(model)
