"""Layer containers and the handful of parameterized layers MSCNet needs."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .engine import Tensor, get_default_dtype, ops


class Parameter(Tensor):
    """A learnable leaf tensor."""

    def __init__(self, data, requires_grad: bool = True, dtype=None):
        super().__init__(data, requires_grad=requires_grad, dtype=dtype or get_default_dtype())


class Module:
    training = True
    _buffers: tuple[str, ...] = ()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _members(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v
            else:
                yield name, value

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, value in self._members():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{name}.")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._members():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_state(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        """Parameters and buffers, in attribute-definition order."""
        for name, value in self._members():
            if isinstance(value, Parameter):
                yield prefix + name, value.data
            elif isinstance(value, Module):
                yield from value.named_state(f"{prefix}{name}.")
            elif name in self._buffers:
                yield prefix + name, value

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(self.named_state())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy ``state`` into this module; nothing is written unless every entry matches."""
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        bad_shape = [f"{k}: file {tuple(np.shape(state[k]))} vs model {own[k].shape}"
                     for k in own if k in state and tuple(np.shape(state[k])) != own[k].shape]
        if missing or unexpected or bad_shape:
            problems = []
            if bad_shape:
                problems.append("shape mismatch: " + "; ".join(bad_shape))
            if missing:
                problems.append("missing: " + ", ".join(missing))
            if unexpected:
                problems.append("unexpected: " + ", ".join(unexpected))
            raise ValueError("state does not match model: " + " | ".join(problems))
        for k, arr in own.items():
            arr[...] = state[k]

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def _members(self):
        for i, layer in enumerate(self.layers):
            yield str(i), layer

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def __getitem__(self, i):
        return self.layers[i]

    def __len__(self):
        return len(self.layers)


def kaiming_normal(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel, stride: int = 1, padding=None, groups: int = 1,
                 bias: bool = False, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.stride = stride
        self.padding = ((kh - 1) // 2, (kw - 1) // 2) if padding is None else padding
        self.groups = groups
        self.weight = Parameter(kaiming_normal(rng, (cout, cin // groups, kh, kw)))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        dtype = get_default_dtype()
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


_ACTS = {"relu": ops.relu, "relu6": ops.relu6, None: None}


class ConvBNAct(Module):
    """conv -> batchnorm -> optional activation."""

    def __init__(self, cin: int, cout: int, kernel=1, stride: int = 1, groups: int = 1,
                 act: str | None = "relu", rng: np.random.Generator | None = None):
        self.conv = Conv2d(cin, cout, kernel, stride=stride, groups=groups, rng=rng)
        self.bn = BatchNorm2d(cout)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        fn = _ACTS[self.act]
        return fn(y) if fn else y


class AsymConv(Module):
    """k x 1 followed by 1 x k convolution, then batchnorm + relu."""

    def __init__(self, channels: int, k: int, rng: np.random.Generator | None = None):
        if k % 2 == 0:
            raise ValueError(f"asymmetric kernel must be odd, got {k}")
        self.k = k
        self.vert = Conv2d(channels, channels, (k, 1), rng=rng)
        self.horz = Conv2d(channels, channels, (1, k), rng=rng)
        self.bn = BatchNorm2d(channels)

    def forward(self, x: Tensor) -> Tensor:
        y = ops.asym_conv(x, self.vert.weight, self.horz.weight)
        return ops.relu(self.bn(y))


def count_params(module: Module) -> int:
    return sum(p.size for p in module.parameters())
