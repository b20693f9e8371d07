"""MSCNet assembly: encoder -> MSCE decoder -> APFA -> saliency map."""
from __future__ import annotations

import os
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from .apfa import APFA
from .backbone import Encoder, WidthConfig, make_divisible
from .engine import Tensor, mscw
from .msce import Decoder
from .nn import Module

_DEFAULT_DECODER_WIDTH = {0.25: 32, 1.0: 96}


@dataclass
class ModelConfig:
    alpha: float = 0.25
    decoder_width: int | None = None
    ca_ratio: int = 4
    upsample: str = "bilinear"
    input_size: int = 64
    include_head: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.decoder_width is None:
            self.decoder_width = _DEFAULT_DECODER_WIDTH.get(self.alpha, make_divisible(96 * self.alpha))
        if self.upsample not in ("bilinear", "nearest"):
            raise ValueError(f"upsample must be bilinear or nearest, got {self.upsample!r}")
        if self.input_size % 32:
            raise ValueError(f"input_size must be a multiple of 32, got {self.input_size}")
        if self.decoder_width % 2 or self.decoder_width < self.ca_ratio:
            raise ValueError(f"decoder width {self.decoder_width} must be even and >= ca_ratio")

    @property
    def width(self) -> WidthConfig:
        return WidthConfig(self.alpha, self.include_head)

    def to_dict(self) -> dict:
        return asdict(self)


class MSCNet(Module):
    def __init__(self, cfg: ModelConfig | None = None):
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.encoder = Encoder(cfg.width, rng)
        self.decoder = Decoder(self.encoder.channels, cfg.decoder_width, cfg.upsample, rng)
        self.apfa = APFA(cfg.decoder_width, ratio=cfg.ca_ratio, upsample=cfg.upsample, rng=rng)

    def features(self, image: Tensor):
        enc = self.encoder(image)
        dec = self.decoder(enc)
        return enc, dec

    def forward(self, image: Tensor) -> Tensor:
        _, dec = self.features(image)
        return self.apfa(dec)


def count_params(model: Module, depth: int = 1) -> tuple[int, "OrderedDict[str, int]"]:
    """Total learnable scalars and a breakdown by the first ``depth`` name components."""
    groups: OrderedDict[str, int] = OrderedDict()
    total = 0
    for name, p in model.named_parameters():
        key = ".".join(name.split(".")[:depth])
        groups[key] = groups.get(key, 0) + p.size
        total += p.size
    return total, groups


def save_weights(model: Module, path: str | os.PathLike) -> None:
    mscw.save(path, model.named_state())


def load_weights(model: Module, path: str | os.PathLike) -> None:
    """Parse and validate the whole file before touching the model."""
    state = mscw.load(path)
    model.load_state_dict(state)
