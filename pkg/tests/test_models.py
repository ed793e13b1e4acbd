import numpy as np
import pytest
import torch

from mafnet import models


def tiny_config(base=4, **kw):
    return models.GeneratorConfig(base_width=base, disc_width=4, **kw)


def build_generator(base=4, seed=0):
    gen = models.MafGenerator(tiny_config(base))
    g = torch.Generator().manual_seed(seed)
    models.init_weights(gen, g)
    return gen


def test_config_rejects_bad_nce_layers():
    with pytest.raises(models.ShapeMismatch):
        models.GeneratorConfig(nce_layers=(0, 4, 4))
    with pytest.raises(models.ShapeMismatch):
        models.GeneratorConfig(nce_layers=(0, 99))


def test_encoder_layer_zero_is_identity_tap():
    gen = build_generator()
    x = torch.randn(1, 1, 32, 32)
    pyr = gen.encode(x, 0)
    assert torch.equal(pyr.features[0], x)


def test_encoder_finite_on_zero_input():
    gen = build_generator()
    pyr = gen.encode(torch.zeros(1, 1, 32, 32), 1)
    assert torch.isfinite(pyr.bottleneck).all()
    for f in pyr.features.values():
        assert torch.isfinite(f).all()


def test_encoders_have_distinct_weights():
    gen = build_generator()
    x = torch.randn(1, 1, 32, 32)
    a = gen.encode(x, 0).bottleneck
    b = gen.encode(x, 1).bottleneck
    assert not torch.allclose(a, b)


def test_bottleneck_is_input_over_four():
    gen = build_generator(base=2)
    pyr = gen.encode(torch.randn(1, 1, 224, 224), 0)
    assert pyr.bottleneck.shape[-2:] == (56, 56)
    assert pyr.bottleneck.shape[1] == 8  # 4 * base


def test_maf_equal_logits_give_exact_thirds():
    maf = models.MafBlock(channels=4)
    with torch.no_grad():
        maf.attention.weight.zero_()
        maf.attention.bias.zero_()
    feats = [torch.randn(2, 4, 5, 5) for _ in range(3)]
    _, attn = maf(*feats)
    assert torch.equal(attn, torch.full_like(attn, 1.0 / 3.0))


def test_maf_attention_sums_to_one():
    torch.manual_seed(0)
    for trial in range(20):
        maf = models.MafBlock(channels=3)
        g = torch.Generator().manual_seed(trial)
        models.init_weights(maf, g)
        feats = [torch.randn(1, 3, 4, 4) for _ in range(3)]
        _, attn = maf(*feats)
        sums = attn.sum(dim=1)
        assert (sums - 1.0).abs().max() < 1e-6


def test_maf_passthrough_fixture_uses_attention_weighted_first_modality():
    c = 3
    maf = models.MafBlock(channels=c)
    g = torch.Generator().manual_seed(1)
    models.init_weights(maf, g)
    with torch.no_grad():
        maf.fuse.weight.zero_()
        maf.fuse.bias.zero_()
        for ch in range(c):
            maf.fuse.weight[ch, ch, 0, 0] = 1.0  # pass through block 1 features
    f1 = torch.randn(1, c, 4, 4)
    zeros = torch.zeros(1, c, 4, 4)
    fused, attn = maf(f1, zeros, zeros)
    expected = torch.nn.functional.leaky_relu(attn[:, 0:1] * f1, 0.2)
    assert torch.allclose(fused, expected, atol=1e-7)


def test_maf_shape_mismatch():
    maf = models.MafBlock(channels=2)
    with pytest.raises(models.ShapeMismatch):
        maf(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 5, 5))


def test_decoder_bounds_and_upsampling():
    gen = build_generator(base=2)
    fused = torch.randn(1, 8, 56, 56) * 5
    out = gen.decoder(fused)
    assert out.shape == (1, 1, 224, 224)
    assert out.min() >= -1.0 and out.max() <= 1.0
    assert torch.equal(out, gen.decoder(fused))


def test_synthesize_shapes_and_finiteness():
    gen = build_generator(base=2)
    x = torch.rand(1, 3, 64, 64) * 2 - 1
    y, pyramids, attn = gen.synthesize(x)
    assert y.shape == (1, 1, 64, 64)
    assert torch.isfinite(y).all()
    assert len(pyramids) == 3
    assert attn.shape == (1, 3, 16, 16)
    assert set(pyramids[0].features) == set(gen.config.nce_layers)


def test_synthesize_sensitive_to_channel_permutation():
    gen = build_generator(base=2)
    x = torch.rand(1, 3, 32, 32) * 2 - 1
    y_a, _, _ = gen.synthesize(x)
    y_b, _, _ = gen.synthesize(x[:, [1, 0, 2]])
    assert not torch.allclose(y_a, y_b)


def test_synthesize_rejects_bad_shapes():
    gen = build_generator(base=2)
    with pytest.raises(models.ShapeMismatch):
        gen.synthesize(torch.zeros(1, 2, 32, 32))
    with pytest.raises(models.ShapeMismatch):
        gen.synthesize(torch.zeros(1, 3, 30, 30))


def test_discriminator_zero_weights_give_zero_logits():
    disc = models.PatchDiscriminator(width=4)
    with torch.no_grad():
        for p in disc.parameters():
            p.zero_()
    out = disc(torch.randn(1, 1, 224, 224))
    assert torch.equal(out, torch.zeros_like(out))


def test_discriminator_outputs_a_map():
    disc = models.PatchDiscriminator(width=4)
    out = disc(torch.zeros(2, 1, 224, 224))
    assert out.shape[-2] > 1 and out.shape[-1] > 1
    for extreme in (-1.0, 1.0):
        logits = disc(torch.full((1, 1, 64, 64), extreme))
        assert torch.isfinite(logits).all()


def test_sample_positions_exhaustive_case():
    pos = models.sample_patch_positions((1, 4, 5, 5), 25, seed=3)
    assert sorted(pos.tolist()) == list(range(25))


def test_sample_positions_deterministic_and_distinct():
    a = models.sample_patch_positions((1, 4, 8, 8), 16, seed=7)
    b = models.sample_patch_positions((1, 4, 8, 8), 16, seed=7)
    np.testing.assert_array_equal(a, b)
    for seed in range(1000):
        pos = models.sample_patch_positions((1, 1, 6, 6), 12, seed=seed)
        assert len(set(pos.tolist())) == 12


def test_sample_positions_too_many():
    with pytest.raises(models.TooManyPatches):
        models.sample_patch_positions((1, 1, 4, 4), 17, seed=0)


def heads_for(gen):
    heads = models.ProjectionHeads(gen.tap_channels, dim=256)
    g = torch.Generator().manual_seed(5)
    models.init_weights(heads, g)
    return heads


def test_project_unit_norm_and_dim_for_all_layers():
    gen = build_generator(base=2)
    heads = heads_for(gen)
    pyr = gen.encode(torch.randn(2, 1, 32, 32), 1)
    for layer, feat in pyr.features.items():
        pos = models.sample_patch_positions(feat.shape, 4, seed=layer)
        emb = heads.project(feat, pos, 1, layer)
        assert emb.shape == (2, 4, 256)
        norms = emb.norm(dim=-1)
        assert (norms - 1.0).abs().max() < 1e-5


def test_project_identical_features_give_identical_embeddings():
    gen = build_generator(base=2)
    heads = heads_for(gen)
    feat = torch.ones(1, 8, 4, 4)  # every position identical
    emb = heads.project(feat, np.array([0, 5, 9]), 0, 8)
    assert torch.allclose(emb[0, 0], emb[0, 1])
    assert torch.allclose(emb[0, 0], emb[0, 2])


def test_unet_shapes_and_classes():
    cfg = models.UNetConfig(base_width=4)
    net = models.UNet(cfg)
    g = torch.Generator().manual_seed(2)
    models.init_weights(net, g)
    x = torch.randn(1, 4, 64, 64)
    logits = net(x)
    assert logits.shape == (1, 4, 64, 64)
    classes = logits.argmax(dim=1)
    assert set(classes.unique().tolist()) <= {0, 1, 2, 3}


def test_unet_config_contract():
    with pytest.raises(models.ShapeMismatch):
        models.UNetConfig(in_channels=3)
    with pytest.raises(models.ShapeMismatch):
        models.UNetConfig(out_classes=2)


def test_forward_determinism():
    gen = build_generator(base=2)
    x = torch.rand(1, 3, 32, 32)
    y1, _, _ = gen.synthesize(x)
    y2, _, _ = gen.synthesize(x)
    assert torch.equal(y1, y2)
