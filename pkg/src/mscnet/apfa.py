"""Attention-based pyramid feature aggregation.

Row 0 holds the four decoder maps ordered deepest to shallowest. Each row gets
channel attention on its deepest entry and spatial attention on its shallowest,
then adjacent entries are fused pairwise into the next, one-shorter row.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor, ops
from .nn import Conv2d, ConvBNAct, Module


class ChannelAttention(Module):
    def __init__(self, channels: int, ratio: int = 4, rng: np.random.Generator | None = None):
        if channels < ratio:
            raise ValueError(f"channel attention needs channels >= ratio ({channels} < {ratio})")
        self.fc1 = Conv2d(channels, channels // ratio, 1, bias=True, rng=rng)
        self.fc2 = Conv2d(channels // ratio, channels, 1, bias=True, rng=rng)

    def _mlp(self, v: Tensor) -> Tensor:
        return self.fc2(ops.relu(self.fc1(v)))

    def gate(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self._mlp(ops.global_pool(x, "avg")) + self._mlp(ops.global_pool(x, "max")))

    def forward(self, x: Tensor) -> Tensor:
        return self.gate(x) * x


class SpatialAttention(Module):
    def __init__(self, rng: np.random.Generator | None = None):
        self.conv = Conv2d(2, 1, 3, bias=True, rng=rng)

    def gate(self, x: Tensor) -> Tensor:
        pooled = ops.concat([ops.channel_pool(x, "avg"), ops.channel_pool(x, "max")], axis=1)
        return ops.sigmoid(self.conv(pooled))

    def forward(self, x: Tensor) -> Tensor:
        return self.gate(x) * x


class FusePair(Module):
    """cat(up2(deep), shallow) -> 1x1 conv -> BN -> ReLU at the shallow resolution."""

    def __init__(self, width: int, upsample: str = "bilinear", rng: np.random.Generator | None = None):
        self.upsample = upsample
        self.conv = ConvBNAct(2 * width, width, 1, rng=rng)

    def forward(self, deep: Tensor, shallow: Tensor) -> Tensor:
        if shallow.shape[2] != 2 * deep.shape[2] or shallow.shape[3] != 2 * deep.shape[3]:
            raise ValueError(f"fuse_pair needs a 2x resolution ratio, got {deep.shape} and {shallow.shape}")
        return self.conv(ops.concat([ops.upsample2x(deep, self.upsample), shallow], axis=1))


HEAD_STD = 0.01


@dataclass
class PyramidState:
    rows: list[list[Tensor]] = field(default_factory=list)

    def row_sizes(self) -> list[int]:
        return [len(r) for r in self.rows]


class APFA(Module):
    def __init__(self, width: int, levels: int = 4, ratio: int = 4, upsample: str = "bilinear",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.levels = levels
        self.upsample = upsample
        for r in range(levels - 1):
            setattr(self, f"ca{r}", ChannelAttention(width, ratio, rng=rng))
            setattr(self, f"sa{r}", SpatialAttention(rng=rng))
            for j in range(levels - 1 - r):
                setattr(self, f"fuse{r}_{j}", FusePair(width, upsample, rng=rng))
        self.head = Conv2d(width, 1, 3, bias=True, rng=rng)
        # linear output layer: small init keeps fresh predictions away from 0 and 1
        w = self.head.weight.data
        w[...] = rng.normal(0.0, HEAD_STD, w.shape)

    def pyramid(self, maps: list[Tensor]) -> PyramidState:
        if len(maps) != self.levels:
            raise ValueError(f"APFA expects {self.levels} maps, got {len(maps)}")
        state = PyramidState([list(maps)])
        row = list(maps)
        for r in range(self.levels - 1):
            row[0] = getattr(self, f"ca{r}")(row[0])
            row[-1] = getattr(self, f"sa{r}")(row[-1])
            row = [getattr(self, f"fuse{r}_{j}")(row[j], row[j + 1]) for j in range(len(row) - 1)]
            state.rows.append(row)
        return state

    def logits(self, maps: list[Tensor]) -> Tensor:
        apex = self.pyramid(maps).rows[-1][0]
        return ops.upsample2x(self.head(apex), self.upsample)

    def forward(self, maps) -> Tensor:
        if hasattr(maps, "as_list"):
            maps = maps.as_list()
        return ops.sigmoid(self.logits(list(maps)))
