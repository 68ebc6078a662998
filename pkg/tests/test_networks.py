import itertools

import numpy as np
import pytest
import torch

from tgan.errors import ShapeError
from tgan.networks import (AttentionFusion, Generator, IndicatorDiscriminator, ModelConfig, PatchDiscriminator,
                           TGANModels, attention_weights, count_parameters, patch_map_side)
from tgan.training import desk_model_config

SMALL = ModelConfig(image_size=64, code_length=100, n_indicators=5, gen_widths=(8, 16, 16, 32), cond_hidden=16,
                    d_a=8, d_k=8, adv_widths=(8, 16, 16, 32), ind_widths=(8, 16, 16, 32), fpn_width=8)


# --------------------------------------------------------------------------- parameter-count oracle


def conv(cin, cout, k):
    return cin * cout * k * k + cout


def norm(c):
    return 2 * c


def expected_generator(cfg):
    w1, w2, w3, w4 = cfg.gen_widths
    s = (cfg.image_size // 16) ** 2
    enc = conv(1, w1, 4) + conv(w1, w2, 4) + norm(w2) + conv(w2, w3, 4) + norm(w3) + conv(w3, w4, 4) + norm(w4)
    cond = cfg.code_length * cfg.cond_hidden + cfg.cond_hidden + cfg.cond_hidden * w4 * cfg.d_a + w4 * cfg.d_a
    fusion = cfg.d_a * cfg.d_k + s * cfg.d_k + s * s
    dec = (conv(w4, w3, 4) + norm(w3) + conv(2 * w3, w2, 4) + norm(w2) + conv(2 * w2, w1, 4) + norm(w1)
           + conv(2 * w1, w1, 4) + norm(w1))
    return enc + cond + fusion + dec + conv(w1, 1, 3)


def expected_adv(cfg):
    w1, w2, w3, w4 = cfg.adv_widths
    return conv(2, w1, 4) + conv(w1, w2, 4) + norm(w2) + conv(w2, w3, 4) + norm(w3) + conv(w3, w4, 4) + norm(w4) \
        + conv(w4, 1, 4)


def expected_indicator(cfg):
    chans = [1] + list(cfg.ind_widths)
    total = 0
    for cin, cout in zip(chans, chans[1:]):
        total += 9 * cin * cout + norm(cout) + 9 * cout * cout + norm(cout) + cin * cout + norm(cout)
    f, p = cfg.fpn_width, cfg.n_indicators
    total += sum(c * f + f for c in cfg.ind_widths[1:])
    total += 3 * (conv(f, f, 3) + f * p + p)
    return total


@pytest.mark.parametrize("cfg", [ModelConfig(), desk_model_config(64), SMALL], ids=["full", "desk", "small"])
def test_parameter_counts(cfg):
    m = TGANModels(cfg)
    assert count_parameters(m.generator) == expected_generator(cfg)
    assert count_parameters(m.adv) == expected_adv(cfg)
    assert count_parameters(m.indicator) == expected_indicator(cfg)


def test_code_length_enters_only_first_condition_layer():
    a = Generator(ModelConfig(code_length=1000))
    b = Generator(ModelConfig(code_length=500))
    assert count_parameters(a) - count_parameters(b) == 500 * 512


# --------------------------------------------------------------------------- shapes


def test_patch_map_side_formula():
    assert patch_map_side(256) == 28
    assert patch_map_side(64) == 4
    for h in range(40, 520, 8):
        assert patch_map_side(h) == h // 8 - 4


def test_forward_shapes_and_ranges():
    torch.manual_seed(0)
    m = TGANModels(SMALL)
    x = torch.rand(3, 1, 64, 64) * 2 - 1
    diff = torch.zeros(3, 100)
    diff[:, 40:55] = 1
    y = m.generator(x, diff)
    assert y.shape == (3, 1, 64, 64)
    assert torch.isfinite(y).all() and y.abs().max() <= 1
    p = m.adv(x, y)
    assert p.shape == (3, 4, 4)
    assert ((p > 0) & (p < 1)).all()
    c = m.indicator(y)
    assert c.shape == (3, 5) and torch.isfinite(c).all()


def test_patch_map_at_256():
    cfg = ModelConfig(image_size=256, adv_widths=(4, 4, 4, 4))
    out = PatchDiscriminator(cfg)(torch.zeros(1, 1, 256, 256), torch.zeros(1, 1, 256, 256))
    assert out.shape == (1, 28, 28)


def test_discriminator_rejects_small_or_mismatched():
    d = PatchDiscriminator(SMALL)
    with pytest.raises(ShapeError):
        d(torch.zeros(1, 1, 32, 32), torch.zeros(1, 1, 32, 32))
    with pytest.raises(ShapeError):
        d(torch.zeros(1, 1, 64, 64), torch.zeros(1, 1, 48, 48))


def test_generator_shape_errors():
    g = Generator(SMALL)
    with pytest.raises(ShapeError):
        g(torch.zeros(1, 1, 64, 64), torch.zeros(1, 99))
    with pytest.raises(ShapeError):
        g(torch.zeros(1, 1, 32, 32), torch.zeros(1, 100))
    with pytest.raises(ShapeError):
        g(torch.zeros(1, 3, 64, 64), torch.zeros(1, 100))
    with pytest.raises(ShapeError):
        Generator(ModelConfig(image_size=72))


def test_generator_responds_to_code_and_skips():
    torch.manual_seed(1)
    g = Generator(SMALL).eval()
    x = torch.rand(2, 1, 64, 64) * 2 - 1
    d0, d1 = torch.zeros(2, 100), torch.zeros(2, 100)
    d1[:, 50:80] = 1
    with torch.no_grad():
        base = g(x, d0)
        assert not torch.equal(base, g(x, d1))
        assert not torch.equal(base, g(x, d0, skips=False))


def test_init_is_seeded():
    torch.manual_seed(3)
    a = Generator(SMALL)
    torch.manual_seed(3)
    b = Generator(SMALL)
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    w = a.enc[1][0].weight
    assert abs(w.std().item() - 0.02) < 0.003


# --------------------------------------------------------------------------- attention


def _fusion(spatial=4, d_a=6, d_k=5, seed=0):
    torch.manual_seed(seed)
    return AttentionFusion(spatial, d_a, d_k).double()


def test_attention_rows_sum_to_one():
    f = _fusion()
    f_x, f_a = torch.randn(2, 7, 4, dtype=torch.float64), torch.randn(2, 7, 6, dtype=torch.float64)
    f.attend(f_x, f_a)
    w = f.last_weights
    assert w.shape == (2, 7, 7)
    assert torch.allclose(w.sum(-1), torch.ones(2, 7, dtype=torch.float64), atol=1e-12)
    assert (w >= 0).all()


def test_attention_uniform_weights_average_values():
    f = _fusion()
    torch.nn.init.zeros_(f.w_q.weight)
    f_x, f_a = torch.randn(1, 5, 4, dtype=torch.float64), torch.randn(1, 5, 6, dtype=torch.float64)
    out = f.attend(f_x, f_a)
    v = f.w_v(f_x)
    assert torch.allclose(out, v.mean(dim=1, keepdim=True).expand_as(out), atol=1e-12)


def test_attention_single_token_returns_values():
    f = _fusion()
    f_x, f_a = torch.randn(3, 1, 4, dtype=torch.float64), torch.randn(3, 1, 6, dtype=torch.float64)
    assert torch.allclose(f.attend(f_x, f_a), f.w_v(f_x), atol=1e-12)


def test_attention_invariant_to_key_order():
    f = _fusion()
    f_x, f_a = torch.randn(1, 6, 4, dtype=torch.float64), torch.randn(1, 6, 6, dtype=torch.float64)
    ref = f.attend(f_x, f_a)
    for perm in itertools.islice(itertools.permutations(range(6)), 0, 720, 97):
        assert torch.allclose(f.attend(f_x[:, list(perm)], f_a), ref, atol=1e-12)


def test_attention_matches_longhand():
    rng = np.random.default_rng(0)
    q, k = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    expected = np.zeros((3, 5))
    for i in range(3):
        s = np.array([q[i] @ k[j] / 2.0 for j in range(5)])
        e = np.exp(s - s.max())
        expected[i] = e / e.sum()
    got = attention_weights(torch.from_numpy(q), torch.from_numpy(k)).numpy()
    assert np.allclose(got, expected, atol=1e-12)


def test_attention_shape_errors():
    f = _fusion()
    with pytest.raises(ShapeError):
        f.attend(torch.randn(1, 5, 3, dtype=torch.float64), torch.randn(1, 5, 6, dtype=torch.float64))
    with pytest.raises(ShapeError):
        f.attend(torch.randn(1, 5, 4, dtype=torch.float64), torch.randn(1, 4, 6, dtype=torch.float64))


def test_fusion_forward_is_residual():
    f = _fusion()
    torch.nn.init.zeros_(f.w_v.weight)
    feats = torch.randn(2, 6, 2, 2, dtype=torch.float64)
    assert torch.equal(f(feats, torch.randn(2, 6, 6, dtype=torch.float64)), feats)


# --------------------------------------------------------------------------- indicator head


def test_indicator_output_is_mean_of_scales():
    torch.manual_seed(0)
    d = IndicatorDiscriminator(SMALL).eval()
    y = torch.rand(2, 1, 64, 64)
    with torch.no_grad():
        outs = d.scale_outputs(y)
        assert len(outs) == 3
        assert torch.allclose(d(y), sum(outs) / 3, atol=1e-6)


def test_indicator_constant_heads():
    d = IndicatorDiscriminator(SMALL)
    for i, head in enumerate(d.heads):
        torch.nn.init.zeros_(head.fc.weight)
        torch.nn.init.constant_(head.fc.bias, float(i + 1))
    with torch.no_grad():
        out = d(torch.rand(4, 1, 64, 64))
    assert torch.allclose(out, torch.full((4, 5), 2.0))


def test_indicator_rejects_tiny_input():
    with pytest.raises(ShapeError):
        IndicatorDiscriminator(SMALL)(torch.zeros(1, 1, 16, 16))


def test_config_round_trip():
    cfg = desk_model_config(64, n_indicators=7)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
