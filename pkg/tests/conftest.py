import pytest
import torch

from dadkit.adversary import AdversarialRecord
from dadkit.data import ImageDataset, make_synthetic
from dadkit.discretizer import Discretizer
from dadkit.model import LinearClassifier, MLPClassifier, SmallConvNet

NUM_CLASSES = 3
SHAPE = (3, 8, 8)


@pytest.fixture
def tiny_dataset() -> ImageDataset:
    return make_synthetic(NUM_CLASSES, 4, size=8, seed=0, name="tiny")


@pytest.fixture
def linear_model() -> LinearClassifier:
    torch.manual_seed(0)
    return LinearClassifier(NUM_CLASSES, SHAPE)


@pytest.fixture
def mlp_model() -> MLPClassifier:
    torch.manual_seed(1)
    return MLPClassifier(NUM_CLASSES, SHAPE, hidden=8).double()


@pytest.fixture
def conv_model() -> SmallConvNet:
    torch.manual_seed(2)
    return SmallConvNet(NUM_CLASSES, SHAPE, width=4)


@pytest.fixture
def tiny_disc() -> Discretizer:
    torch.manual_seed(3)
    return Discretizer(3, codebook_size=8, latent_dim=4, downsample=2, hidden=8).freeze()


def record_for(dataset: ImageDataset, index: int, *, accepted: bool = True) -> AdversarialRecord:
    """A cache record pointing at ``dataset[index]`` with a slightly shifted image."""
    ex = dataset[index]
    logits = torch.zeros(dataset.num_classes)
    logits[ex.label] = 1.0
    return AdversarialRecord(
        sample_id=ex.id,
        label=ex.label,
        image=(ex.image * 0.5).clone(),
        teacher_logits_aug=logits.clone(),
        teacher_logits_clean=logits.clone(),
        accepted=accepted,
        seed=index,
    )
