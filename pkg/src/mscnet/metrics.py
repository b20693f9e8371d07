"""Saliency evaluation: MAE, F-measure curve, S-measure, E-measure.

All functions take a prediction in [0, 1] and a binary ground truth as 2-D arrays
(or anything that squeezes to 2-D).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

BETA2 = 0.3
N_THRESHOLDS = 256
_GUARD = 1e-8
_EPS = np.spacing(1.0)


def _prep(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    while p.ndim > 2 and p.shape[0] == 1:  # [1,1,H,W] / [1,H,W] -> [H,W]; thin maps keep their axes
        p, g = p[0], g[0]
    g = g > 0.5
    if p.ndim != 2:
        raise ValueError(f"expected a single 2-D map, got shape {p.shape}")
    return p, g


def mae(pred, gt) -> float:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    return float(np.mean(np.abs(p - g)))


@dataclass
class FCurve:
    precision: np.ndarray
    recall: np.ndarray
    fscore: np.ndarray
    max_f: float
    threshold: float
    empty_gt: bool


def thresholds() -> np.ndarray:
    return np.arange(N_THRESHOLDS) / 255.0


def f_measure_curve(pred, gt) -> FCurve:
    """Precision/recall/F_beta for binarizations ``pred >= k/255``, k = 0..255."""
    p, g = _prep(pred, gt)
    ts = thresholds()
    fg = np.sort(p[g])
    bg = np.sort(p[~g])
    tp = fg.size - np.searchsorted(fg, ts, side="left")
    fp = bg.size - np.searchsorted(bg, ts, side="left")
    precision = tp / (tp + fp + _GUARD)
    recall = tp / (fg.size + _GUARD)
    f = (1 + BETA2) * precision * recall / (BETA2 * precision + recall + _GUARD)
    k = int(np.argmax(f))
    return FCurve(precision, recall, f, float(f[k]), float(ts[k]), fg.size == 0)


# ------------------------------------------------------------------ S-measure

def _s_object(x: np.ndarray) -> float:
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2 * mu / (mu * mu + 1 + sigma + _EPS)


def _object_score(p: np.ndarray, g: np.ndarray) -> float:
    u = g.mean()
    fg = _s_object(p[g]) if g.any() else 0.0
    bg = _s_object(1 - p[~g]) if (~g).any() else 0.0
    return u * fg + (1 - u) * bg


def _centroid(g: np.ndarray) -> tuple[int, int]:
    h, w = g.shape
    if not g.any():
        return int(np.round(w / 2)), int(np.round(h / 2))
    ys, xs = np.nonzero(g)
    return int(np.round(xs.mean())) + 1, int(np.round(ys.mean())) + 1


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    x, y = p.mean(), g.mean()
    denom = max(n - 1, 1)
    sx = ((p - x) ** 2).sum() / denom
    sy = ((g - y) ** 2).sum() / denom
    sxy = ((p - x) * (g - y)).sum() / denom
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + _EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _region_score(p: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    cx, cy = _centroid(g)
    gf = g.astype(np.float64)
    total = 0.0
    for ys, xs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        pq, gq = p[ys, xs], gf[ys, xs]
        if pq.size == 0:
            continue
        total += pq.size / (h * w) * _ssim(pq, gq)
    return total


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure: alpha * object similarity + (1 - alpha) * region similarity."""
    p, g = _prep(pred, gt)
    y = g.mean()
    if y == 0:
        return float(1 - p.mean())
    if y == 1:
        return float(p.mean())
    q = alpha * _object_score(p, g) + (1 - alpha) * _region_score(p, g)
    return float(max(q, 0.0))


# ------------------------------------------------------------------ E-measure

def _enhanced_alignment(fm: np.ndarray, g: np.ndarray) -> float:
    fm = fm.astype(np.float64)
    gf = g.astype(np.float64)
    if not g.any():
        enhanced = 1.0 - fm
    elif g.all():
        enhanced = fm
    else:
        a = fm - fm.mean()
        b = gf - gf.mean()
        align = 2 * a * b / (a * a + b * b + _EPS)
        enhanced = (align + 1) ** 2 / 4
    return float(enhanced.mean())


def e_measure(pred, gt) -> float:
    """Enhanced-alignment measure with the adaptive threshold min(2 * mean(pred), 1)."""
    p, g = _prep(pred, gt)
    th = min(2 * p.mean(), 1.0)
    # an all-zero map would otherwise binarize to all foreground at th = 0
    fm = p >= th if th > 0 else p > 0
    return _enhanced_alignment(fm, g)


# -------------------------------------------------------------------- reports

@dataclass
class MetricsReport:
    mae: float
    max_f: float
    max_f_threshold: float
    s_measure: float
    e_measure: float
    precision: list[float] = field(default_factory=list)
    recall: list[float] = field(default_factory=list)
    empty_gt: bool = False
    curve_max_f: float | None = None

    CSV_FIELDS = ("mae", "maxF", "maxF_threshold", "sm", "em")

    def to_dict(self, curves: bool = True) -> dict:
        d = {"mae": self.mae, "maxF": self.max_f, "maxF_threshold": self.max_f_threshold,
             "sm": self.s_measure, "em": self.e_measure}
        if curves:
            d["precision"] = list(self.precision)
            d["recall"] = list(self.recall)
        if self.empty_gt:
            d["empty_gt"] = True
        if self.curve_max_f is not None:
            d["curve_maxF"] = self.curve_max_f
        return d

    def to_json(self, curves: bool = True) -> str:
        return json.dumps(self.to_dict(curves))

    def csv_row(self) -> str:
        return ",".join(repr(float(v)) for v in
                        (self.mae, self.max_f, self.max_f_threshold, self.s_measure, self.e_measure))

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(d["mae"], d["maxF"], d["maxF_threshold"], d["sm"], d["em"],
                   list(d.get("precision", [])), list(d.get("recall", [])), bool(d.get("empty_gt", False)),
                   d.get("curve_maxF"))


def evaluate_map(pred, gt) -> MetricsReport:
    curve = f_measure_curve(pred, gt)
    return MetricsReport(
        mae=mae(pred, gt),
        max_f=curve.max_f,
        max_f_threshold=curve.threshold,
        s_measure=s_measure(pred, gt),
        e_measure=e_measure(pred, gt),
        precision=curve.precision.tolist(),
        recall=curve.recall.tolist(),
        empty_gt=curve.empty_gt,
    )


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    """Per-column mean of per-image rows; precision/recall curves are averaged too.

    ``curve_max_f`` additionally holds the max of the mean per-image F-curve, the
    other common way of reporting a dataset-level maxF.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    prec = np.mean([r.precision for r in reports], axis=0)
    rec = np.mean([r.recall for r in reports], axis=0)
    fcurves = [(1 + BETA2) * np.asarray(r.precision) * np.asarray(r.recall)
               / (BETA2 * np.asarray(r.precision) + np.asarray(r.recall) + _GUARD) for r in reports]
    return MetricsReport(
        mae=float(np.mean([r.mae for r in reports])),
        max_f=float(np.mean([r.max_f for r in reports])),
        max_f_threshold=float(np.mean([r.max_f_threshold for r in reports])),
        s_measure=float(np.mean([r.s_measure for r in reports])),
        e_measure=float(np.mean([r.e_measure for r in reports])),
        precision=prec.tolist(),
        recall=rec.tolist(),
        empty_gt=any(r.empty_gt for r in reports),
        curve_max_f=float(np.mean(fcurves, axis=0).max()),
    )
