import numpy as np
import pytest
import torch
from helpers import tiny_batch, tiny_model
from hypothesis import given, settings
from hypothesis import strategies as st

from vivreid.frm_stig import SpatialTemporalRelation, loss_p_id
from vivreid.losses import IdentityClassifier


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def unrolled_lstm(lstm, seq):
    """Plain numpy recurrence with the i, f, g, o gate layout used by torch."""
    w_ih = lstm.weight_ih_l0.detach().numpy()
    w_hh = lstm.weight_hh_l0.detach().numpy()
    bias = (lstm.bias_ih_l0 + lstm.bias_hh_l0).detach().numpy()
    hid = w_hh.shape[1]
    h, c = np.zeros(hid), np.zeros(hid)
    outs = []
    for x in seq:
        z = w_ih @ x + w_hh @ h + bias
        i, f, g, o = z[:hid], z[hid:2 * hid], z[2 * hid:3 * hid], z[3 * hid:]
        c = _sigmoid(f) * c + _sigmoid(i) * np.tanh(g)
        h = _sigmoid(o) * np.tanh(c)
        outs.append(h)
    return np.stack(outs)


def _relation(dim=4, parts=3, mode="full", seed=0):
    torch.manual_seed(seed)
    return SpatialTemporalRelation(dim, parts, mode).double()


# -- partitioning --------------------------------------------------------------

def test_constant_map_gives_identical_parts():
    rel = _relation(dim=3, parts=6)
    parts = rel.partition_patches(torch.full((2, 3, 12, 4), 0.7, dtype=torch.float64))
    assert parts.shape == (2, 6, 3)
    assert torch.allclose(parts, torch.full_like(parts, 0.7))


def test_single_nonzero_strip():
    rel = _relation(dim=2, parts=3)
    m = torch.zeros(1, 2, 6, 2, dtype=torch.float64)
    m[:, :, 2:4] = 1.0
    parts = rel.partition_patches(m)[0]
    assert torch.equal(parts[1], torch.ones(2, dtype=torch.float64))
    assert torch.equal(parts[0], torch.zeros(2, dtype=torch.float64))
    assert torch.equal(parts[2], torch.zeros(2, dtype=torch.float64))


def test_partition_matches_loop_oracle():
    rel = _relation(dim=3, parts=3)
    m = np.random.default_rng(0).normal(size=(2, 3, 9, 4))
    got = rel.partition_patches(torch.from_numpy(m)).numpy()
    for n in range(2):
        for k in range(3):
            for c in range(3):
                assert abs(got[n, k, c] - m[n, c, 3 * k:3 * k + 3, :].mean()) < 1e-12


def test_partition_rejects_indivisible_height():
    with pytest.raises(ValueError):
        _relation(parts=6).partition_patches(torch.zeros(1, 4, 8, 2))


def test_model_rejects_indivisible_stage4_height():
    from vivreid.backbone import BackboneConfig
    from vivreid.model import ModelConfig, ReIDNet

    with pytest.raises(ValueError):
        ReIDNet(ModelConfig(num_classes=3, backbone=BackboneConfig(input_size=(64, 32))))


# -- recurrences ---------------------------------------------------------------

def test_motion_encode_matches_unrolled_lstm():
    rel = _relation()
    seq = np.random.default_rng(1).normal(size=(5, 4))
    got = rel.motion_encode(torch.from_numpy(seq)[None])[0].detach().numpy()
    np.testing.assert_allclose(got, unrolled_lstm(rel.lstm_mot, seq), atol=1e-12)


def test_motion_encode_single_frame():
    rel = _relation()
    seq = np.random.default_rng(2).normal(size=(1, 4))
    got = rel.motion_encode(torch.from_numpy(seq)[None])[0].detach().numpy()
    np.testing.assert_allclose(got, unrolled_lstm(rel.lstm_mot, seq), atol=1e-12)


def test_motion_encode_rejects_empty():
    with pytest.raises(ValueError):
        _relation().motion_encode(torch.zeros(1, 0, 4, dtype=torch.float64))


def test_motion_encode_is_order_sensitive():
    rel = _relation()
    seq = torch.from_numpy(np.random.default_rng(3).normal(size=(1, 4, 4)))
    fwd = rel.motion_encode(seq)[:, -1]
    rev = rel.motion_encode(seq.flip(1))[:, -1]
    assert not torch.allclose(fwd, rev)


def test_spatial_encode_is_final_state_of_unrolled_lstm():
    rel = _relation()
    parts = np.random.default_rng(4).normal(size=(3, 4))
    got = rel.spatial_encode(torch.from_numpy(parts)[None])[0].detach().numpy()
    np.testing.assert_allclose(got, unrolled_lstm(rel.lstm_spa, parts)[-1], atol=1e-12)


def test_spatial_encode_is_order_sensitive():
    rel = _relation()
    parts = torch.from_numpy(np.random.default_rng(5).normal(size=(1, 3, 4)))
    assert not torch.allclose(rel.spatial_encode(parts), rel.spatial_encode(parts.flip(1)))


def test_spatial_encode_rejects_wrong_part_count():
    with pytest.raises(ValueError):
        _relation(parts=3).spatial_encode(torch.zeros(1, 2, 4, dtype=torch.float64))


# -- gate ------------------------------------------------------------------------

def test_gate_is_half_when_second_layer_is_zero():
    rel = _relation()
    with torch.no_grad():
        rel.gate_out.weight.zero_()
        rel.gate_out.bias.zero_()
    f = torch.randn(5, 4, dtype=torch.float64)
    g = rel.gate(f, torch.randn(5, 4, dtype=torch.float64))
    assert torch.equal(g, torch.full_like(g, 0.5))
    torch.testing.assert_close(rel.highlight(f, torch.zeros_like(f)), 0.5 * f)


def test_zero_feature_is_highlighted_to_zero():
    rel = _relation()
    out = rel.highlight(torch.zeros(3, 4, dtype=torch.float64), torch.randn(3, 4, dtype=torch.float64))
    assert torch.equal(out, torch.zeros(3, 4, dtype=torch.float64))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 5.0))
def test_gate_is_bounded(seed, scale):
    rel = _relation(seed=seed % 7)
    rng = np.random.default_rng(seed)
    f = torch.from_numpy(rng.normal(scale=scale, size=(6, 4)))
    s = torch.from_numpy(rng.normal(scale=scale, size=(6, 4)))
    g = rel.gate(f, s)
    assert ((g >= 0) & (g <= 1)).all()
    assert (rel.highlight(f, s).abs() <= f.abs() + 1e-12).all()


def test_gate_rejects_width_mismatch():
    with pytest.raises(ValueError):
        _relation().gate(torch.zeros(1, 3, dtype=torch.float64), torch.zeros(1, 4, dtype=torch.float64))


# -- aggregation -----------------------------------------------------------------

def test_aggregate_zero_motion_single_frame_is_concatenation():
    rel = _relation(dim=2, parts=3)
    h = torch.arange(6, dtype=torch.float64).view(1, 1, 3, 2)
    out = rel.aggregate_parts(h, torch.zeros_like(h))
    assert torch.equal(out, torch.arange(6, dtype=torch.float64)[None])


def test_aggregate_averages_over_time_and_concatenates_top_to_bottom():
    rel = _relation(dim=1, parts=2)
    h = torch.tensor([[[[1.0], [10.0]], [[3.0], [30.0]]]], dtype=torch.float64)
    m = torch.full_like(h, 0.5)
    assert torch.equal(rel.aggregate_parts(h, m), torch.tensor([[2.5, 20.5]], dtype=torch.float64))


def test_aggregate_rejects_incomplete_grid():
    rel = _relation(dim=2, parts=3)
    with pytest.raises(ValueError):
        rel.aggregate_parts(torch.zeros(1, 2, 2, 2), torch.zeros(1, 2, 2, 2))
    with pytest.raises(ValueError):
        rel.aggregate_parts(torch.zeros(1, 2, 3, 2), torch.zeros(1, 1, 3, 2))


# -- forward -----------------------------------------------------------------------

def test_forward_matches_stepwise_composition():
    rel = _relation(dim=4, parts=3)
    maps = torch.from_numpy(np.random.default_rng(6).normal(size=(2, 3, 4, 6, 2)))
    out = rel(maps)
    assert out.shape == (2, 12)
    for b in range(2):
        parts = rel.partition_patches(maps[b])  # [T, K, C]
        motion = torch.stack([rel.motion_encode(parts[:, k][None])[0] for k in range(3)], 1)
        spatial = rel.spatial_encode(motion[-1][None])[0]
        hl = rel.highlight(parts, spatial.expand_as(parts))
        expected = (hl + motion).mean(0).flatten()
        torch.testing.assert_close(out[b], expected)


def test_no_spa_uses_zero_spatial_vector():
    full, nospa = _relation(mode="full"), _relation(mode="no_spa")
    maps = torch.from_numpy(np.random.default_rng(7).normal(size=(1, 2, 4, 3, 2)))
    parts = nospa.partition_patches(maps[0])
    motion = torch.stack([nospa.motion_encode(parts[:, k][None])[0] for k in range(3)], 1)
    hl = nospa.highlight(parts, torch.zeros_like(parts))
    torch.testing.assert_close(nospa(maps)[0], (hl + motion).mean(0).flatten())
    assert not torch.allclose(full(maps), nospa(maps))


def test_without_gate_parts_pass_through():
    rel = _relation(mode="fr_e_ti_only")
    maps = torch.from_numpy(np.random.default_rng(8).normal(size=(1, 2, 4, 3, 2)))
    parts = rel.partition_patches(maps[0])
    motion = torch.stack([rel.motion_encode(parts[:, k][None])[0] for k in range(3)], 1)
    torch.testing.assert_close(rel(maps)[0], (parts + motion).mean(0).flatten())


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        SpatialTemporalRelation(4, 3, "sideways")


def test_model_part_descriptor_width():
    model = tiny_model().eval()
    v, i, _ = tiny_batch()
    fv, fi = model.stems(v, i)
    desc = model.part_descriptors(fv, fi)
    assert desc.shape == (4, 6 * 128)


def test_p_id_matches_oracle():
    clf = IdentityClassifier(2, 2).double()
    with torch.no_grad():
        clf.weight.copy_(torch.eye(2, dtype=torch.float64))
    x = np.array([[2.0, -1.0], [0.0, 0.5]])
    y = np.array([0, 0])
    expected = np.mean([np.log(np.exp(r).sum()) - r[t] for r, t in zip(x, y)])
    assert abs(loss_p_id(torch.from_numpy(x), torch.from_numpy(y), clf).item() - expected) < 1e-12
