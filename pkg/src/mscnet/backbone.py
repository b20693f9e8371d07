"""MobileNet-V2 encoder cut into five stride levels (Conv-1 ... Conv-5)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor
from .nn import ConvBNAct, Module, Sequential


@dataclass(frozen=True)
class InvertedResidualSpec:
    t: float  # expansion factor
    c: int  # output channels at width 1.0
    n: int  # repeats
    s: int  # stride of the first repeat


# standard MobileNet-V2 (t, c, n, s) table, stem excluded
STAGES = (
    InvertedResidualSpec(1, 16, 1, 1),
    InvertedResidualSpec(6, 24, 2, 2),
    InvertedResidualSpec(6, 32, 3, 2),
    InvertedResidualSpec(6, 64, 4, 2),
    InvertedResidualSpec(6, 96, 3, 1),
    InvertedResidualSpec(6, 160, 3, 2),
    InvertedResidualSpec(6, 320, 1, 1),
)
STEM_CHANNELS = 32
HEAD_CHANNELS = 1280
# encoder level (1..5) that each stage belongs to
STAGE_LEVEL = (1, 2, 3, 4, 4, 5, 5)


def make_divisible(value: float, divisor: int = 8) -> int:
    new = max(divisor, int(value + divisor / 2) // divisor * divisor)
    if new < 0.9 * value:
        new += divisor
    return new


@dataclass(frozen=True)
class WidthConfig:
    alpha: float = 0.25
    include_head: bool = False
    stem: int = field(init=False)
    stage_channels: tuple[int, ...] = field(init=False)
    head: int = field(init=False)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"width multiplier must be positive, got {self.alpha}")
        object.__setattr__(self, "stem", make_divisible(STEM_CHANNELS * self.alpha))
        object.__setattr__(self, "stage_channels",
                           tuple(make_divisible(s.c * self.alpha) for s in STAGES))
        object.__setattr__(self, "head", make_divisible(HEAD_CHANNELS * max(1.0, self.alpha)))
        for c in (self.stem,) + self.stage_channels:
            if c < 8 or c % 4:
                raise ValueError(f"derived channel count {c} violates >=8 and divisible by 4")

    def level_channels(self) -> tuple[int, int, int, int, int]:
        """Output width of Conv-1 ... Conv-5."""
        last = {}
        for lvl, c in zip(STAGE_LEVEL, self.stage_channels):
            last[lvl] = c
        if self.include_head:
            last[5] = self.head
        return tuple(last[i] for i in range(1, 6))


class InvertedResidual(Module):
    """1x1 expand (relu6) -> 3x3 depthwise (relu6) -> 1x1 linear projection, plus skip."""

    def __init__(self, cin: int, cout: int, stride: int, t: float, rng=None):
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        hidden = int(round(cin * t))
        self.stride = stride
        self.use_skip = stride == 1 and cin == cout
        self.expand = ConvBNAct(cin, hidden, 1, act="relu6", rng=rng) if t != 1 else None
        self.depthwise = ConvBNAct(hidden, hidden, 3, stride=stride, groups=hidden, act="relu6", rng=rng)
        self.project = ConvBNAct(hidden, cout, 1, act=None, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        y = x if self.expand is None else self.expand(x)
        y = self.project(self.depthwise(y))
        return x + y if self.use_skip else y


@dataclass
class EncoderFeatures:
    conv1: Tensor
    conv2: Tensor
    conv3: Tensor
    conv4: Tensor
    conv5: Tensor

    def as_list(self) -> list[Tensor]:
        return [self.conv1, self.conv2, self.conv3, self.conv4, self.conv5]


class Encoder(Module):
    def __init__(self, cfg: WidthConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        blocks: dict[int, list[Module]] = {i: [] for i in range(1, 6)}
        blocks[1].append(ConvBNAct(3, cfg.stem, 3, stride=2, act="relu6", rng=rng))
        cin = cfg.stem
        for spec, lvl, cout in zip(STAGES, STAGE_LEVEL, cfg.stage_channels):
            for i in range(spec.n):
                blocks[lvl].append(InvertedResidual(cin, cout, spec.s if i == 0 else 1, spec.t, rng=rng))
                cin = cout
        if cfg.include_head:
            blocks[5].append(ConvBNAct(cin, cfg.head, 1, act="relu6", rng=rng))
        self.block1 = Sequential(*blocks[1])
        self.block2 = Sequential(*blocks[2])
        self.block3 = Sequential(*blocks[3])
        self.block4 = Sequential(*blocks[4])
        self.block5 = Sequential(*blocks[5])

    @property
    def channels(self) -> tuple[int, int, int, int, int]:
        return self.cfg.level_channels()

    def forward(self, x: Tensor) -> EncoderFeatures:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"encoder expects [N,3,H,W], got {x.shape}")
        if x.shape[2] % 32 or x.shape[3] % 32:
            raise ValueError(f"input H and W must be multiples of 32, got {x.shape[2]}x{x.shape[3]}")
        feats = []
        for block in (self.block1, self.block2, self.block3, self.block4, self.block5):
            x = block(x)
            feats.append(x)
        return EncoderFeatures(*feats)


def build_encoder(cfg: WidthConfig, rng: np.random.Generator | None = None) -> Encoder:
    return Encoder(cfg, rng)


def analytic_param_count(alpha: float, include_head: bool = False) -> int:
    """Closed-form learnable-scalar count of the encoder from the stage table alone."""

    def conv_bn(cin, cout, k, groups=1):
        return cout * (cin // groups) * k * k + 2 * cout

    def div8(v):
        new = max(8, int(v + 4) // 8 * 8)
        return new + 8 if new < 0.9 * v else new

    total = conv_bn(3, div8(32 * alpha), 3)
    cin = div8(32 * alpha)
    for t, c, n, _ in ((1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
                       (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)):
        cout = div8(c * alpha)
        for _ in range(n):
            hidden = int(round(cin * t))
            if t != 1:
                total += conv_bn(cin, hidden, 1)
            total += conv_bn(hidden, hidden, 3, groups=hidden)
            total += conv_bn(hidden, cout, 1)
            cin = cout
    if include_head:
        total += conv_bn(cin, div8(1280 * max(1.0, alpha)), 1)
    return total
