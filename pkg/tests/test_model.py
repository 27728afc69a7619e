import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dadkit.model import (
    ARCHITECTURES,
    argmax_rows,
    build_classifier,
    fingerprint,
    load_classifier,
    logits,
    predict,
    save_classifier,
    temp_softmax,
)

finite_rows = arrays(
    np.float64,
    st.tuples(st.integers(1, 8), st.integers(2, 6)),
    elements=st.floats(-50, 50, allow_nan=False),
)


def test_empty_batch(linear_model):
    out = logits(linear_model, torch.empty((0, 3, 8, 8)))
    assert out.shape == (0, 3)


def test_shape_mismatch(linear_model):
    with pytest.raises(ValueError):
        logits(linear_model, torch.zeros((2, 3, 4, 4)))
    with pytest.raises(ValueError):
        logits(linear_model, torch.zeros((3, 8, 8)))


def test_eval_mode_is_deterministic(conv_model):
    conv_model.eval()
    x = torch.rand((4, 3, 8, 8), generator=torch.Generator().manual_seed(0))
    assert torch.equal(logits(conv_model, x), logits(conv_model, x))


def test_input_gradient_matches_finite_differences(mlp_model):
    x = torch.rand((1, 3, 8, 8), generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    x.requires_grad_(True)
    (grad,) = torch.autograd.grad(logits(mlp_model, x).sum(), x)

    h = 1e-6
    flat = x.detach().flatten()
    for i in torch.randperm(flat.numel(), generator=torch.Generator().manual_seed(1))[:20].tolist():
        up, down = flat.clone(), flat.clone()
        up[i] += h
        down[i] -= h
        with torch.no_grad():
            fd = (logits(mlp_model, up.view_as(x)).sum() - logits(mlp_model, down.view_as(x)).sum()) / (2 * h)
        g = grad.flatten()[i]
        assert abs(fd - g) <= 1e-4 * max(abs(g.item()), 1e-3)


def test_temp_softmax_examples():
    uniform = temp_softmax(torch.full((2, 5), 3.0), 4.0)
    assert torch.allclose(uniform, torch.full((2, 5), 0.2))

    p = temp_softmax(torch.tensor([2.0, 0.0], dtype=torch.float64), 1.0)
    e2 = math.exp(2)
    np.testing.assert_allclose(p.numpy(), [e2 / (e2 + 1), 1 / (e2 + 1)], atol=1e-12)
    assert p[0].item() == pytest.approx(0.8808, abs=1e-4)

    flat = temp_softmax(torch.tensor([5.0, -3.0, 0.0]), 1e6)
    assert (flat.max() - flat.min()).item() < 1e-5


def test_temperature_must_be_positive():
    with pytest.raises(ValueError):
        temp_softmax(torch.zeros(3), 0.0)
    with pytest.raises(ValueError):
        temp_softmax(torch.zeros(3), -1.0)


@given(rows=finite_rows, t=st.floats(0.1, 100), shift=st.floats(-100, 100))
def test_softmax_properties(rows, t, shift):
    z = torch.from_numpy(rows)
    p = temp_softmax(z, t)
    np.testing.assert_allclose(p.sum(-1).numpy(), 1.0, atol=1e-6)
    assert (p >= 0).all() and (p <= 1).all()
    np.testing.assert_allclose(temp_softmax(z + shift, t).numpy(), p.numpy(), atol=1e-6)


def test_argmax_readout():
    assert argmax_rows(torch.tensor([[0.0, 5.0, 1.0]])).tolist() == [1]
    assert argmax_rows(torch.tensor([[3.0, 3.0, 0.0]])).tolist() == [0]


def test_argmax_matches_linear_scan():
    rows = torch.randint(-3, 4, (1000, 5), generator=torch.Generator().manual_seed(0)).float()

    def scan(row):
        best = 0
        for j in range(1, len(row)):
            if row[j] > row[best]:
                best = j
        return best

    assert argmax_rows(rows).tolist() == [scan(r.tolist()) for r in rows]


@given(rows=finite_rows, t=st.floats(0.05, 50))
def test_temperature_never_changes_argmax(rows, t):
    z = torch.from_numpy(rows)
    # Rows whose maximum is not unique may legitimately tie after softmax rounding.
    top2 = torch.topk(z, 2, dim=-1).values
    unique = (top2[:, 0] - top2[:, 1]) > 1e-3
    assert torch.equal(argmax_rows(temp_softmax(z, t))[unique], argmax_rows(z)[unique])


def test_predict_returns_class_indices(linear_model):
    x = torch.rand((3, 3, 8, 8))
    out = predict(linear_model, x)
    assert out.dtype == torch.long
    assert out.shape == (3,)


@pytest.mark.parametrize("architecture", sorted(ARCHITECTURES))
def test_build_every_architecture(architecture):
    model = build_classifier(architecture, 4, (3, 8, 8))
    assert logits(model.eval(), torch.rand((2, 3, 8, 8))).shape == (2, 4)


def test_unknown_architecture():
    with pytest.raises(ValueError, match="vit"):
        build_classifier("vit", 10, (3, 32, 32))


def test_freeze(conv_model):
    frozen = conv_model.freeze()
    assert frozen.frozen
    assert not frozen.training


def test_checkpoint_roundtrip(tmp_path, conv_model):
    conv_model.eval()
    path = save_classifier(conv_model, tmp_path / "m.pt", config_hash="abc")
    loaded = load_classifier(path)
    assert loaded.architecture == "small"
    assert loaded.config_hash == "abc"
    assert fingerprint(loaded) == fingerprint(conv_model)
    x = torch.rand((2, 3, 8, 8))
    assert torch.equal(logits(loaded, x), logits(conv_model, x))
