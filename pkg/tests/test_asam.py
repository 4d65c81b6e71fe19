import math

import numpy as np
import pytest
import torch
from helpers import tiny_batch, tiny_model
from hypothesis import given, settings
from hypothesis import strategies as st

from vivreid.asam import IMSA, imsa, loss_att_id, loss_cov_id
from vivreid.backbone import FeatureMap
from vivreid.losses import IdentityClassifier


def _eye_classifier(m):
    clf = IdentityClassifier(m, m).double()
    with torch.no_grad():
        clf.weight.copy_(torch.eye(m, dtype=torch.float64))
    return clf


def _zero_biases(layer):
    with torch.no_grad():
        for conv in (layer.query, layer.key, layer.value):
            conv.bias.zero_()


def test_imsa_zero_input_zero_output():
    torch.manual_seed(0)
    layer = IMSA(16, 8)
    _zero_biases(layer)
    out = layer(torch.zeros(2, 16, 6, 4))
    assert torch.equal(out, torch.zeros(2, 16, 6, 4))


def test_imsa_single_location_closed_form():
    torch.manual_seed(1)
    layer = IMSA(8, 4).double()
    x = torch.randn(3, 8, 1, 1, dtype=torch.float64)
    w = layer.value.weight[:, :, 0, 0]
    expected = x + (torch.einsum("oc,bc->bo", w, x[:, :, 0, 0]) + layer.value.bias)[:, :, None, None]
    torch.testing.assert_close(layer(x), expected)


@settings(max_examples=20, deadline=None)
@given(b=st.integers(1, 3), c=st.sampled_from([2, 4, 8]), h=st.integers(1, 7), w=st.integers(1, 5))
def test_imsa_preserves_shape(b, c, h, w):
    layer = IMSA(c, c // 2)
    x = torch.randn(b, c, h, w)
    assert layer(x).shape == x.shape


def test_imsa_with_zero_value_projection_is_identity():
    layer = IMSA(8, 4)
    with torch.no_grad():
        layer.value.weight.zero_()
        layer.value.bias.zero_()
    x = torch.randn(2, 8, 5, 3)
    assert torch.equal(layer(x), x)


def test_imsa_rows_are_distributions():
    layer = IMSA(8, 4)
    x = torch.randn(2, 8, 5, 3)
    attn = layer.attention(x, x)
    torch.testing.assert_close(attn.sum(-1), torch.ones(2, 15))


def test_imsa_functional_requires_stem_map():
    layer = IMSA(8, 4)
    with pytest.raises(ValueError):
        imsa(layer, FeatureMap(torch.zeros(1, 8, 2, 2), "stage3"))
    assert imsa(layer, FeatureMap(torch.zeros(1, 8, 2, 2), "stem")).stage == "stem"


def test_key_width_must_divide_channels():
    with pytest.raises(ValueError):
        IMSA(16, 5)


# -- attack embedding ----------------------------------------------------------

def test_attack_embed_single_constant_frame():
    model = tiny_model().eval()
    maps = torch.full((1, 1, 16, 24, 12), 0.3, dtype=torch.float64)
    emb = model.attack_embed(maps)
    assert emb.shape == (1, 128) and torch.isfinite(emb).all()


def test_attack_embed_equals_stepwise_composition():
    model = tiny_model().eval()
    v, i, _ = tiny_batch()
    fv, _ = model.stems(v, i)
    b, t = fv.shape[:2]
    frames = fv.flatten(0, 1)
    att = model.backbone.att(model.imsa(frames))
    pooled = att.view(b, t, *att.shape[1:]).mean(dim=(3, 4)).mean(dim=1)
    bn = model.att_head.bn
    expected = (pooled - bn.running_mean) / torch.sqrt(bn.running_var + bn.eps) * bn.weight + bn.bias
    torch.testing.assert_close(model.attack_embed(fv), expected)


def test_attack_embed_distinguishes_sequences():
    model = tiny_model().eval()
    v, i, _ = tiny_batch()
    fv, _ = model.stems(v, i)
    emb = model.attack_embed(fv)
    assert not torch.allclose(emb[0], emb[1])


# -- losses --------------------------------------------------------------------

def test_cov_id_uniform_prediction_is_ln_m():
    clf = _eye_classifier(10)
    loss = loss_cov_id(torch.full((6, 10), 0.7, dtype=torch.float64), clf)
    assert abs(loss.item() - math.log(10)) < 1e-6


def test_cov_id_diverges_for_confident_prediction():
    clf = _eye_classifier(2)
    values = [loss_cov_id(torch.tensor([[s, -s]], dtype=torch.float64), clf).item() for s in (1, 5, 20, 200)]
    assert all(a < b for a, b in zip(values, values[1:]))
    assert values[-1] > 100


def test_cov_id_matches_scalar_oracle():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(4, 4))
    expected = 0.0
    for row in logits:
        p = np.exp(row - row.max())
        p /= p.sum()
        expected += -np.mean(np.log(p))
    expected /= len(logits)
    got = loss_cov_id(torch.from_numpy(logits), _eye_classifier(4)).item()
    assert abs(got - expected) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 10_000))
def test_cov_id_never_below_ln_m(m, n, seed):
    logits = torch.from_numpy(np.random.default_rng(seed).normal(scale=3, size=(n, m)))
    assert loss_cov_id(logits, _eye_classifier(m)).item() >= math.log(m) - 1e-12


def test_cov_id_gives_no_gradient_to_w_def():
    clf = IdentityClassifier(8, 5).double()
    emb = torch.randn(4, 8, dtype=torch.float64, requires_grad=True)
    loss_cov_id(emb, clf).backward()
    assert clf.weight.grad is None
    assert emb.grad is not None and emb.grad.abs().sum() > 0


def test_classifier_needs_two_classes():
    with pytest.raises(ValueError):
        IdentityClassifier(8, 1)


def test_att_id_perfect_prediction_is_zero():
    labels = torch.tensor([0, 3, 1, 2])
    logits = torch.full((4, 4), -50.0, dtype=torch.float64)
    logits[torch.arange(4), labels] = 50.0
    assert loss_att_id(logits, labels, _eye_classifier(4)).item() < 1e-6


def test_att_id_uniform_prediction_is_ln_m():
    loss = loss_att_id(torch.zeros(5, 10, dtype=torch.float64), torch.arange(5), _eye_classifier(10))
    assert abs(loss.item() - math.log(10)) < 1e-6


def test_att_id_matches_oracle():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(6, 5))
    labels = rng.integers(0, 5, size=6)
    expected = np.mean([np.log(np.exp(r).sum()) - r[y] for r, y in zip(logits, labels)])
    got = loss_att_id(torch.from_numpy(logits), torch.from_numpy(labels), _eye_classifier(5)).item()
    assert abs(got - expected) < 1e-12


def test_att_id_rejects_out_of_range_label():
    with pytest.raises(ValueError):
        loss_att_id(torch.zeros(2, 3, dtype=torch.float64), torch.tensor([0, 3]), _eye_classifier(3))
