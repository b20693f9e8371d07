"""Central-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, no_grad


@dataclass
class GradcheckReport:
    max_rel_err: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4
    checked: int = 0
    skipped: int = 0  # coordinates whose stencil crossed a kink

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_err)) and self.max_rel_err < self.tol


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """Worst absolute discrepancy, scaled by the larger of the two gradients' max-norms.

    ``floor`` raises the scale, e.g. to the full tensor's gradient norm when only a few
    coordinates were sampled.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(b).max(), floor)
    diff = np.abs(a - b).max()
    if scale == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return float(diff / scale)


def _scalarize(out: Tensor, weights: np.ndarray | None) -> Tensor:
    if out.size == 1:
        return ops.reshape(out, ())
    return ops.sum(ops.mul(out, Tensor(weights, dtype=out.dtype)))


def gradcheck(fn: Callable[..., Tensor], inputs: Tensor | Sequence[Tensor], eps: float = 1e-5,
              tol: float = 1e-4, params: Sequence[tuple[str, Tensor]] | dict = (),
              max_entries: int | None = None, seed: int = 0, skip_kinks: bool = False) -> GradcheckReport:
    """Compare autodiff gradients of ``fn(*inputs)`` against central differences.

    Non-scalar outputs are reduced with a fixed random projection. ``params`` adds
    extra named tensors (e.g. module weights) to the check. With ``max_entries`` only
    that many randomly chosen coordinates per tensor are perturbed.

    With ``skip_kinks`` a coordinate is replaced by another one when either side of its
    stencil flips a relu/clamp/max branch: central differences are no oracle there.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    named = [(f"input{i}", t) for i, t in enumerate(inputs)]
    named += list(params.items()) if isinstance(params, dict) else list(params)
    rng = np.random.default_rng(seed)

    saved = {}
    for name, t in named:
        saved[name] = t.requires_grad
        t.requires_grad = True
        t.grad = None

    out = fn(*inputs)
    weights = None if out.size == 1 else rng.uniform(-1.0, 1.0, size=out.shape)
    _scalarize(out, weights).backward()

    def f() -> tuple[float, list]:
        with no_grad(), ops.record_branches() as branches:
            val = float(_scalarize(fn(*inputs), weights).data)
        return val, branches

    def same(a: list, b: list) -> bool:
        return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))

    base = f()[1] if skip_kinks else None
    report = GradcheckReport(0.0, tol=tol)
    for name, t in named:
        analytic = np.zeros(t.shape) if t.grad is None else np.array(t.grad, dtype=np.float64)
        flat = t.data.reshape(-1)
        want = flat.size if max_entries is None else min(max_entries, flat.size)
        order = rng.permutation(flat.size) if want < flat.size else np.arange(flat.size)
        idx, numeric = [], []
        for i in order:
            if len(idx) == want:
                break
            orig = flat[i]
            flat[i] = orig + eps
            fp, bp = f()
            flat[i] = orig - eps
            fm, bm = f()
            flat[i] = orig
            if skip_kinks and not (same(bp, base) and same(bm, base)):
                report.skipped += 1
                continue
            idx.append(i)
            numeric.append((fp - fm) / (2 * eps))
        idx, numeric = np.array(idx, dtype=np.int64), np.array(numeric)
        # sampled coordinates are judged against the whole tensor's gradient scale
        err = rel_error(analytic.reshape(-1)[idx], numeric, float(np.abs(analytic).max()))
        report.per_tensor[name] = err
        report.checked += idx.size
        report.max_rel_err = max(report.max_rel_err, err)

    for name, t in named:
        t.requires_grad = saved[name]
    return report
