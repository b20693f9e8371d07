"""Multi-scale context extraction and the four-stage decoder built from it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import EncoderFeatures
from .engine import Tensor, ops
from .nn import AsymConv, Conv2d, ConvBNAct, Module

ASYM_KERNELS = (3, 5, 7)


@dataclass(frozen=True)
class MsceConfig:
    in_channels: int
    out_channels: int

    @property
    def mid_channels(self) -> int:
        return self.out_channels // 2

    def __post_init__(self):
        if self.out_channels % 2 or self.out_channels < 2:
            raise ValueError(f"out_channels must be even, got {self.out_channels}")


class MSCE(Module):
    """Two 1x1-reduced paths (3x3 refine, and summed asymmetric k=3/5/7 branches),
    concatenated, fused, and gated by a channel attention vector pooled from the input."""

    def __init__(self, cfg: MsceConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        cin, mid, cout = cfg.in_channels, cfg.mid_channels, cfg.out_channels
        self.cfg = cfg
        self.reduce_a = ConvBNAct(cin, mid, 1, rng=rng)
        self.refine = ConvBNAct(mid, mid, 3, rng=rng)
        self.reduce_b = ConvBNAct(cin, mid, 1, rng=rng)
        self.branches = [AsymConv(mid, k, rng=rng) for k in ASYM_KERNELS]
        self.fuse = ConvBNAct(2 * mid, cout, 1, rng=rng)
        self.out = ConvBNAct(cout, cout, 3, rng=rng)
        # single shared fc (as a 1x1 conv) for both pooled vectors
        self.fc = Conv2d(cin, cout, 1, bias=True, rng=rng)

    def _check(self, f: Tensor) -> None:
        if f.ndim != 4 or f.shape[1] != self.cfg.in_channels:
            raise ValueError(f"MSCE expects {self.cfg.in_channels} input channels, got shape {f.shape}")

    def channel_reweight(self, f: Tensor) -> Tensor:
        self._check(f)
        avg = self.fc(ops.global_pool(f, "avg"))
        mx = self.fc(ops.global_pool(f, "max"))
        return ops.sigmoid(avg + mx)

    def multi_scale(self, f: Tensor) -> Tensor:
        ft = self.reduce_b(f)
        out = self.branches[0](ft)
        for branch in self.branches[1:]:
            out = out + branch(ft)
        return out

    def forward(self, f: Tensor) -> Tensor:
        self._check(f)
        f1 = self.refine(self.reduce_a(f))
        f2 = self.multi_scale(f)
        fused = self.out(self.fuse(ops.concat([f1, f2], axis=1)))
        return self.channel_reweight(f) * fused


@dataclass
class DecoderOutputs:
    """D1 (stride 16, deepest) ... D4 (stride 2)."""
    d1: Tensor
    d2: Tensor
    d3: Tensor
    d4: Tensor

    def as_list(self) -> list[Tensor]:
        return [self.d1, self.d2, self.d3, self.d4]


class Decoder(Module):
    """x = Conv-5; for L = 4..1: x = MSCE(cat(up2(x), project(Conv-L)))."""

    def __init__(self, enc_channels, width: int, upsample: str = "bilinear",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        c1, c2, c3, c4, c5 = enc_channels
        self.width = width
        self.upsample = upsample
        self.proj4 = ConvBNAct(c4, width, 1, rng=rng)
        self.proj3 = ConvBNAct(c3, width, 1, rng=rng)
        self.proj2 = ConvBNAct(c2, width, 1, rng=rng)
        self.proj1 = ConvBNAct(c1, width, 1, rng=rng)
        self.msce1 = MSCE(MsceConfig(c5 + width, width), rng)
        self.msce2 = MSCE(MsceConfig(2 * width, width), rng)
        self.msce3 = MSCE(MsceConfig(2 * width, width), rng)
        self.msce4 = MSCE(MsceConfig(2 * width, width), rng)

    def forward(self, enc: EncoderFeatures) -> DecoderOutputs:
        levels = enc.as_list()
        x = enc.conv5
        outs = []
        for step, lvl in enumerate((4, 3, 2, 1), start=1):
            skip = getattr(self, f"proj{lvl}")(levels[lvl - 1])
            x = getattr(self, f"msce{step}")(ops.concat([ops.upsample2x(x, self.upsample), skip], axis=1))
            outs.append(x)
        return DecoderOutputs(*outs)


def build_decoder(enc_channels, width: int, upsample: str = "bilinear", rng=None) -> Decoder:
    return Decoder(enc_channels, width, upsample, rng)
