import numpy as np
import pytest

from mscnet.backbone import EncoderFeatures, WidthConfig
from mscnet.engine import Tensor, ops
from mscnet.model import ModelConfig, MSCNet
from mscnet.msce import MSCE, Decoder, MsceConfig

from oracles import channel_reweight_loop

S = 1.0 / np.sqrt(1.0 + 1e-5)  # eval-mode BN gain with default running stats


def _delta(conv):
    w = conv.weight.data
    w[...] = 0.0
    cout, cin, kh, kw = w.shape
    for c in range(min(cout, cin)):
        w[c, c, kh // 2, kw // 2] = 1.0


def test_config_mid_is_half():
    assert MsceConfig(16, 8).mid_channels == 4
    with pytest.raises(ValueError):
        MsceConfig(16, 7)


def test_shape_preserved_and_gate_bounded(rng):
    m = MSCE(MsceConfig(6, 8), rng)
    x = Tensor(rng.standard_normal((2, 6, 9, 7)))
    assert m(x).shape == (2, 8, 9, 7)
    gate = m.channel_reweight(x).data
    assert gate.shape == (2, 8, 1, 1)
    assert np.all((gate > 0) & (gate < 1))


def test_channel_mismatch(rng):
    with pytest.raises(ValueError):
        MSCE(MsceConfig(6, 8), rng)(Tensor(np.zeros((1, 5, 4, 4))))


def test_zero_input_gives_half_gate_and_zero_output(rng):
    m = MSCE(MsceConfig(4, 8), rng)
    x = Tensor(np.zeros((2, 4, 6, 6)))
    np.testing.assert_array_equal(m.channel_reweight(x).data, 0.5)
    np.testing.assert_array_equal(m(x).data, 0.0)


def test_reweight_constant_input(rng):
    m = MSCE(MsceConfig(4, 6), rng)
    v = rng.standard_normal(4)
    x = np.broadcast_to(v[None, :, None, None], (1, 4, 5, 5)).copy()
    fc = np.einsum("oi,i->o", m.fc.weight.data[:, :, 0, 0], v) + m.fc.bias.data
    np.testing.assert_allclose(m.channel_reweight(Tensor(x)).data[0, :, 0, 0], 1 / (1 + np.exp(-2 * fc)),
                               atol=1e-14)


def test_reweight_zero_weights_bias_only(rng):
    m = MSCE(MsceConfig(4, 6), rng)
    m.fc.weight.data[...] = 0.0
    m.fc.bias.data[...] = np.linspace(-1, 1, 6)
    out = m.channel_reweight(Tensor(rng.standard_normal((2, 4, 3, 3)))).data
    np.testing.assert_allclose(out[:, :, 0, 0], np.tile(1 / (1 + np.exp(-2 * np.linspace(-1, 1, 6))), (2, 1)))


def test_reweight_matches_loop_oracle(rng):
    m = MSCE(MsceConfig(5, 6), rng)
    m.fc.bias.data[...] = rng.standard_normal(6)
    x = rng.standard_normal((2, 5, 4, 3))
    np.testing.assert_allclose(m.channel_reweight(Tensor(x)).data,
                               channel_reweight_loop(x, m.fc.weight.data, m.fc.bias.data), atol=1e-10, rtol=0)


def test_delta_weights_expose_cat_structure(rng):
    m = MSCE(MsceConfig(4, 8), rng).eval()
    for conv in (m.reduce_a.conv, m.refine.conv, m.reduce_b.conv):
        _delta(conv)
    for br in m.branches:
        _delta(br.vert)
        _delta(br.horz)
    m.fc.weight.data[...] = 0.0
    m.fc.bias.data[...] = 20.0  # gate ~ 1
    f = rng.uniform(0.1, 1.0, (1, 4, 6, 6))
    cat = np.concatenate([f * S * S, 3 * f * S * S], axis=1)
    fused = m.out(m.fuse(Tensor(cat))).data
    np.testing.assert_allclose(m(Tensor(f)).data, fused, atol=1e-10, rtol=1e-12)


def test_forward_matches_composed_chain(rng):
    m = MSCE(MsceConfig(6, 8), rng)
    x = Tensor(rng.standard_normal((2, 6, 5, 5)))

    def cba(mod, t):
        y = ops.conv2d(t, mod.conv.weight, None, 1, mod.conv.padding)
        y = ops.batch_norm(y, mod.bn.weight, mod.bn.bias, np.zeros_like(mod.bn.running_mean),
                           np.ones_like(mod.bn.running_var), True)
        return ops.relu(y)

    f1 = cba(m.refine, cba(m.reduce_a, x))
    ft = cba(m.reduce_b, x)
    f2 = None
    for br in m.branches:
        y = ops.asym_conv(ft, br.vert.weight, br.horz.weight)
        y = ops.relu(ops.batch_norm(y, br.bn.weight, br.bn.bias, np.zeros(4), np.ones(4), True))
        f2 = y if f2 is None else f2 + y
    fused = cba(m.out, cba(m.fuse, ops.concat([f1, f2])))
    gate = ops.sigmoid(ops.conv2d(ops.global_pool(x, "avg"), m.fc.weight, m.fc.bias)
                       + ops.conv2d(ops.global_pool(x, "max"), m.fc.weight, m.fc.bias))
    np.testing.assert_allclose(m(x).data, (gate * fused).data, atol=1e-10, rtol=0)


def test_multi_scale_additivity(rng):
    m = MSCE(MsceConfig(6, 8), rng)
    for br in m.branches[1:]:
        br.vert.weight.data[...] = 0.0
        br.horz.weight.data[...] = 0.0
    x = Tensor(rng.standard_normal((2, 6, 5, 5)))
    np.testing.assert_array_equal(m.multi_scale(x).data, m.branches[0](m.reduce_b(x)).data)


# ------------------------------------------------------------------ decoder

def _features(rng, cfg, size, zero=False):
    chans = cfg.level_channels()
    return EncoderFeatures(*[Tensor(np.zeros((1, c, size >> (i + 1), size >> (i + 1))) if zero else
                                    rng.standard_normal((1, c, size >> (i + 1), size >> (i + 1))))
                             for i, c in enumerate(chans)])


def test_decoder_sizes(rng):
    cfg = WidthConfig(0.25)
    dec = Decoder(cfg.level_channels(), 32, rng=rng)
    outs = dec(_features(rng, cfg, 64))
    assert [d.shape[2] for d in outs.as_list()] == [4, 8, 16, 32]
    assert {d.shape[1] for d in outs.as_list()} == {32}


def test_decoder_zero_features(rng):
    cfg = WidthConfig(0.25)
    dec = Decoder(cfg.level_channels(), 32, rng=rng)
    for d in dec(_features(rng, cfg, 64, zero=True)).as_list():
        np.testing.assert_array_equal(d.data, 0.0)


def test_decoder_matches_unrolled(rng):
    cfg = WidthConfig(0.25)
    dec = Decoder(cfg.level_channels(), 32, rng=rng)
    feats = _features(rng, cfg, 64)
    up = ops.upsample2x
    d1 = dec.msce1(ops.concat([up(feats.conv5), dec.proj4(feats.conv4)]))
    d2 = dec.msce2(ops.concat([up(d1), dec.proj3(feats.conv3)]))
    d3 = dec.msce3(ops.concat([up(d2), dec.proj2(feats.conv2)]))
    d4 = dec.msce4(ops.concat([up(d3), dec.proj1(feats.conv1)]))
    for got, want in zip(dec(feats).as_list(), (d1, d2, d3, d4)):
        np.testing.assert_allclose(got.data, want.data, atol=1e-10, rtol=0)


def test_exactly_four_msce_modules():
    m = MSCNet(ModelConfig(alpha=0.25))
    names = {n.split(".")[1] for n, _ in m.named_parameters() if n.startswith("decoder.msce")}
    assert names == {"msce1", "msce2", "msce3", "msce4"}
    assert sum(isinstance(mod, MSCE) for _, mod in m.named_modules()) == 4
