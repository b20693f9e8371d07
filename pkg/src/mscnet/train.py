"""Training, evaluation and inference loops."""
from __future__ import annotations

import contextlib
import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as D
from .engine import Tensor, default_dtype, no_grad
from .losses import LossConfig, total_loss
from .metrics import MetricsReport, evaluate_map, mean_report
from .model import ModelConfig, MSCNet, load_weights, save_weights
from .optim import Adam, cosine_lr

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 6
    lr: float = 1e-4
    weight_decay: float = 5e-4
    decoupled_wd: bool = False
    lam: float = 0.6
    seed: int = 0
    val_fraction: float = 0.1  # 0 -> validate on the training samples
    augment: bool = True
    dtype: str = "float32"
    threads: int = 0  # 0 = strict single thread
    eval_every: int = 1
    lr_min: float = 0.0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "eval_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.weight_decay < 0 or self.lam < 0:
            raise ValueError("lr must be positive; weight_decay and lambda non-negative")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@contextlib.contextmanager
def thread_limit(threads: int):
    with threadpool_limits(limits=max(1, threads) if threads >= 0 else None):
        yield


def split_validation(n: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seed-deterministic (train, val) index split; with fraction 0 validation reuses train."""
    idx = list(range(n))
    if fraction <= 0 or n < 2:
        return idx, idx
    k = max(1, int(round(fraction * n)))
    perm = np.random.default_rng(seed).permutation(n)
    val = sorted(int(i) for i in perm[:k])
    train = sorted(int(i) for i in perm[k:])
    return train, val


def _batch(samples: Sequence[D.Sample], dtype) -> tuple[Tensor, np.ndarray]:
    x = np.stack([s.image for s in samples]).astype(dtype)
    y = np.stack([s.mask for s in samples]).astype(dtype)
    return Tensor(x), y


def predict(model: MSCNet, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Eval-mode saliency maps for an [N,3,H,W] array."""
    was = model.training
    model.eval()
    dtype = model.encoder.block1[0].conv.weight.dtype
    out = []
    with no_grad():
        for i in range(0, len(images), batch_size):
            out.append(model(Tensor(np.asarray(images[i:i + batch_size], dtype=dtype))).data)
    model.train(was)
    return np.concatenate(out, axis=0)


@dataclass
class EvalResult:
    ids: list[str]
    per_image: list[MetricsReport]
    mean: MetricsReport

    def csv(self) -> str:
        head = "id," + ",".join(MetricsReport.CSV_FIELDS)
        rows = [f"{i},{r.csv_row()}" for i, r in zip(self.ids, self.per_image)]
        return "\n".join([head, *rows, f"mean,{self.mean.csv_row()}"]) + "\n"

    def to_dict(self) -> dict:
        return {"mean": self.mean.to_dict(),
                "per_image": {i: r.to_dict(curves=False) for i, r in zip(self.ids, self.per_image)}}

    def write(self, out_dir: str | os.PathLike) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.csv").write_text(self.csv())
        (out / "eval.json").write_text(json.dumps(self.to_dict(), indent=1))


def evaluate_maps(items: Iterable[tuple[str, np.ndarray, np.ndarray]]) -> EvalResult:
    """Metrics for (id, prediction, ground truth) triples, ordered by id."""
    items = sorted(items, key=lambda t: t[0])
    if not items:
        raise ValueError("nothing to evaluate")
    reports = [evaluate_map(p, g) for _, p, g in items]
    return EvalResult([i for i, _, _ in items], reports, mean_report(reports))


def evaluate(model: MSCNet, samples: Sequence[D.Sample], batch_size: int = 8) -> EvalResult:
    if not samples:
        raise ValueError("empty evaluation set")
    preds = predict(model, np.stack([s.image for s in samples]), batch_size)
    return evaluate_maps((s.id, p[0], s.mask[0]) for s, p in zip(samples, preds))


def _json_line(d: dict) -> str:
    return json.dumps(d, sort_keys=True) + "\n"


def train(cfg: TrainConfig, model_cfg: ModelConfig, samples: Sequence[D.Sample],
          out_dir: str | os.PathLike) -> Path:
    """Run the full schedule and write config.json, log.jsonl, best/final weights, metrics.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not samples:
        raise ValueError("no training samples")
    (out / "config.json").write_text(json.dumps({"train": asdict(cfg), "model": model_cfg.to_dict()},
                                                indent=1, sort_keys=True))
    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = split_validation(len(samples), cfg.val_fraction, cfg.seed)
    train_set = [samples[i] for i in train_idx]
    val_set = [samples[i] for i in val_idx]
    loss_cfg = LossConfig(lam=cfg.lam)

    with thread_limit(cfg.threads), default_dtype(dtype):
        model = MSCNet(model_cfg)
        opt = Adam(model.parameters(), cfg.lr, cfg.weight_decay, cfg.decoupled_wd)
        best = -1.0
        log_fh = open(out / "log.jsonl", "w")
        csv_rows = ["epoch,loss," + ",".join(MetricsReport.CSV_FIELDS)]
        try:
            for epoch in range(cfg.epochs):
                opt.lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min)
                model.train()
                order = rng.permutation(len(train_set))
                losses = []
                for b in range(0, len(order), cfg.batch_size):
                    batch = [train_set[i] for i in order[b:b + cfg.batch_size]]
                    if cfg.augment:
                        batch = [D.augment(s, rng) for s in batch]
                    x, y = _batch(batch, dtype)
                    loss = total_loss(model(x), y, loss_cfg)
                    if not np.isfinite(loss.data):
                        ids = [s.id for s in batch]
                        (out / "failure.json").write_text(json.dumps(
                            {"epoch": epoch, "batch": b // cfg.batch_size, "ids": ids,
                             "loss": repr(float(loss.data))}))
                        raise NumericalError(f"non-finite loss at epoch {epoch}, batch ids {ids}")
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
                    losses.append(float(loss.data))
                record = {"epoch": epoch, "lr": opt.lr, "loss": float(np.mean(losses))}
                last = epoch == cfg.epochs - 1
                if (epoch + 1) % cfg.eval_every == 0 or last:
                    res = evaluate(model, val_set)
                    record["val"] = res.mean.to_dict(curves=False)
                    csv_rows.append(f"{epoch},{record['loss']!r},{res.mean.csv_row()}")
                    if res.mean.max_f > best:
                        best = res.mean.max_f
                        save_weights(model, out / "best.mscw")
                log_fh.write(_json_line(record))
                log_fh.flush()
                log.info("epoch %d lr %.3g loss %.5f", epoch, opt.lr, record["loss"])
        finally:
            log_fh.close()
            (out / "metrics.csv").write_text("\n".join(csv_rows) + "\n")
        save_weights(model, out / "final.mscw")
    return out


def load_model(weights: str | os.PathLike, model_cfg: ModelConfig, dtype="float32") -> MSCNet:
    with default_dtype(dtype):
        model = MSCNet(model_cfg)
    load_weights(model, weights)
    return model.eval()


def infer(model: MSCNet, image_paths: Sequence[str | os.PathLike], out_dir: str | os.PathLike,
          size: int | None = None, fmt: str = "png") -> tuple[list[Path], dict[str, str]]:
    """Write ``<id>_sal.<fmt>`` maps at each input's native size; per-file errors are collected."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    size = size or model.cfg.input_size
    written, errors = [], {}
    for path in image_paths:
        try:
            raw = D.read_image(path)
        except OSError as exc:
            errors[str(path)] = str(exc)
            log.warning("skipping %s: %s", path, exc)
            continue
        img = D.image_to_chw(raw)
        h, w = img.shape[1:]
        pred = predict(model, D.resize_array(img, (size, size), "bilinear")[None])[0]
        sal = np.clip(D.resize_array(pred.astype(np.float64), (h, w), "bilinear")[0], 0.0, 1.0)
        target = out / f"{Path(path).stem}_sal.{fmt}"
        D.write_image(target, D.to_uint8(sal))
        written.append(target)
    return written, errors
