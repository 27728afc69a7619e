import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from dadkit.corruptions import (
    SEVERITY_TABLE,
    CorruptionKind,
    CorruptionSpec,
    corrupt,
    corrupt_dataset,
    load_corruption_manifest,
    parse_grid,
    parse_severities,
    with_corruptions,
)


def test_zero_sigma_noise_is_identity():
    image = torch.rand((3, 16, 16), generator=torch.Generator().manual_seed(0))
    table = {**SEVERITY_TABLE, CorruptionKind.GAUSSIAN_NOISE: (0.0,) * 5}
    out = corrupt(image, CorruptionSpec("gaussian_noise", 3, seed=5), table)
    assert torch.equal(out, image)


def clipped_noise_variance(sigma: float, half_width: float = 0.5) -> float:
    """Variance of clip(sigma * Z, -a, a) for standard normal Z."""
    b = half_width / sigma
    inside = sigma**2 * (2 * norm.cdf(b) - 1 - 2 * b * norm.pdf(b))
    return inside + 2 * half_width**2 * norm.sf(b)


@pytest.mark.parametrize("severity", [1, 2, 3, 4, 5])
def test_noise_variance_matches_schedule(severity):
    # Mid-grey start: the only distortion of the variance is clipping at 0 and 1.
    image = torch.full((3, 64, 64), 0.5)
    out = corrupt(image, CorruptionSpec(CorruptionKind.GAUSSIAN_NOISE, severity, seed=severity))
    sigma = SEVERITY_TABLE[CorruptionKind.GAUSSIAN_NOISE][severity - 1]
    variance = (out - image).double().var().item()
    assert variance == pytest.approx(clipped_noise_variance(sigma), rel=0.05)


def test_same_spec_same_output():
    image = torch.rand((3, 8, 8), generator=torch.Generator().manual_seed(1))
    spec = CorruptionSpec("fog", 2, seed=9)
    assert torch.equal(corrupt(image, spec), corrupt(image, spec))
    assert not torch.equal(corrupt(image, spec), corrupt(image, CorruptionSpec("fog", 2, seed=10)))


@settings(deadline=None, max_examples=60)
@given(
    kind=st.sampled_from(list(CorruptionKind)),
    severity=st.integers(min_value=1, max_value=5),
    seed=st.integers(min_value=0, max_value=2**63),
    pixel_seed=st.integers(min_value=0, max_value=2**31),
)
def test_every_corruption_stays_in_range(kind, severity, seed, pixel_seed):
    image = torch.rand((3, 8, 8), generator=torch.Generator().manual_seed(pixel_seed))
    out = corrupt(image, CorruptionSpec(kind, severity, seed))
    assert out.shape == image.shape
    assert out.min() >= 0
    assert out.max() <= 1


def test_bad_specs():
    with pytest.raises(ValueError):
        CorruptionSpec("snow", 1)
    with pytest.raises(ValueError):
        CorruptionSpec("blur", 0)
    with pytest.raises(ValueError):
        CorruptionSpec("blur", 6)
    with pytest.raises(ValueError, match="integer"):
        CorruptionSpec("blur", True)
    with pytest.raises(ValueError):
        corrupt(torch.full((3, 4, 4), 2.0), CorruptionSpec("blur", 1))


def test_kind_aliases():
    assert CorruptionKind("jpeg-like") is CorruptionKind.JPEG_LIKE
    assert CorruptionSpec("Gaussian-Noise", 1).label == "gaussian_noise-1"


def test_corrupt_dataset_keeps_ids(tiny_dataset):
    out = corrupt_dataset(tiny_dataset, CorruptionSpec("pixelate", 5, seed=1))
    assert out.ids == tiny_dataset.ids
    assert [ex.label for ex in out] == [ex.label for ex in tiny_dataset]


def test_with_corruptions_grows_with_fresh_ids(tiny_dataset):
    out = with_corruptions(tiny_dataset, ["blur", "contrast"], severities=[1, 3], seed=2)
    assert len(out) == len(tiny_dataset) * 5
    assert len(set(out.ids)) == len(out)


def test_parsers(tmp_path):
    assert parse_severities("1-5") == [1, 2, 3, 4, 5]
    assert parse_severities("2,4") == [2, 4]
    grid = parse_grid("gaussian_noise:1-2;blur")
    assert [s.label for s in grid] == [
        "gaussian_noise-1",
        "gaussian_noise-2",
        "blur-1",
        "blur-2",
        "blur-3",
        "blur-4",
        "blur-5",
    ]

    manifest = tmp_path / "suite.txt"
    manifest.write_text("# shifted evaluation\nfog 2\ncontrast 1-2\n\n")
    assert [s.label for s in load_corruption_manifest(manifest)] == ["fog-2", "contrast-1", "contrast-2"]

    manifest.write_text("fog\n")
    with pytest.raises(ValueError, match=":1:"):
        load_corruption_manifest(manifest)
