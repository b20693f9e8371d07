import numpy as np
import pytest

from mscnet.backbone import (STAGES, InvertedResidual, WidthConfig, analytic_param_count, build_encoder,
                             make_divisible)
from mscnet.engine import Tensor, ops
from mscnet.nn import Conv2d, count_params


def _bn(x, bn):
    return ops.batch_norm(x, bn.weight, bn.bias, bn.running_mean.copy(), bn.running_var.copy(), bn.training)


def test_small_width_feature_sizes(rng):
    enc = build_encoder(WidthConfig(0.25), rng)
    feats = enc(Tensor(rng.uniform(0, 1, (1, 3, 64, 64))))
    assert [f.shape[2] for f in feats.as_list()] == [32, 16, 8, 4, 2]
    assert tuple(f.shape[1] for f in feats.as_list()) == enc.channels


def test_five_stride_two_reductions():
    enc = build_encoder(WidthConfig(0.25))
    strides = [m.stride for _, m in enc.named_modules() if isinstance(m, Conv2d) and m.stride == 2]
    assert len(strides) == 5


@pytest.mark.parametrize("alpha", [0.25, 1.0])
def test_width_invariants(alpha):
    cfg = WidthConfig(alpha)
    for c in (cfg.stem, *cfg.stage_channels):
        assert c >= 8 and c % 4 == 0
    assert len(cfg.stage_channels) == len(STAGES)


def test_make_divisible_reference_values():
    assert [make_divisible(c * 0.25) for c in (32, 16, 24, 32, 64, 96, 160, 320)] == [8, 8, 8, 8, 16, 24, 40, 80]
    assert make_divisible(1280) == 1280


@pytest.mark.parametrize("alpha,head", [(0.25, False), (1.0, False), (1.0, True)])
def test_census_matches_closed_form(alpha, head):
    assert count_params(build_encoder(WidthConfig(alpha, head))) == analytic_param_count(alpha, head)


def test_feature_extractor_with_head_near_reference():
    # the standard 1.0x feature extractor, 1x1x1280 head included, is about 2.22M parameters
    n = analytic_param_count(1.0, include_head=True)
    assert abs(n - 2.22e6) / 2.22e6 < 0.05


def test_non_multiple_of_32_rejected():
    enc = build_encoder(WidthConfig(0.25))
    with pytest.raises(ValueError):
        enc(Tensor(np.zeros((1, 3, 48, 64))))


def test_skip_rule():
    assert InvertedResidual(8, 8, 1, 6).use_skip
    assert not InvertedResidual(8, 16, 1, 6).use_skip
    assert not InvertedResidual(8, 8, 2, 6).use_skip


def test_zero_projection_is_pure_skip(rng):
    blk = InvertedResidual(8, 8, 1, 6, rng)
    blk.project.conv.weight.data[...] = 0.0
    x = rng.standard_normal((2, 8, 6, 6))
    np.testing.assert_array_equal(blk(Tensor(x)).data, x)


def test_stride_two_halves(rng):
    assert InvertedResidual(8, 16, 2, 6, rng)(Tensor(rng.standard_normal((1, 8, 8, 6)))).shape == (1, 16, 4, 3)


def test_block_matches_composed_primitives(rng):
    blk = InvertedResidual(8, 8, 1, 6, rng)
    x = Tensor(rng.standard_normal((2, 8, 5, 5)))
    e, d, p = blk.expand, blk.depthwise, blk.project
    y = ops.relu6(_bn(ops.conv2d(x, e.conv.weight), e.bn))
    y = ops.relu6(_bn(ops.conv2d(y, d.conv.weight, None, 1, 1, groups=48), d.bn))
    y = _bn(ops.conv2d(y, p.conv.weight), p.bn)
    np.testing.assert_allclose(blk(x).data, (x + y).data, atol=1e-10, rtol=0)


def test_frozen_encoder_gets_no_gradient(rng):
    from mscnet.model import ModelConfig, MSCNet
    from mscnet.losses import total_loss

    m = MSCNet(ModelConfig(alpha=0.25, input_size=32))
    m.encoder.requires_grad_(False)
    x = Tensor(rng.uniform(0, 1, (2, 3, 32, 32)))
    total_loss(m(x), (rng.random((2, 1, 32, 32)) > 0.5).astype(float)).backward()
    assert all(p.grad is None or not np.any(p.grad) for p in m.encoder.parameters())
    assert any(np.any(p.grad) for p in m.decoder.parameters())
