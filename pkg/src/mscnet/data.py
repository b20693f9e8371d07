"""Image/mask I/O, synthetic remote-sensing-like scenes, augmentation, manifests."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .engine.ops import resize_matrix


@dataclass
class Sample:
    image: np.ndarray  # [3, H, W] in [0, 1]
    mask: np.ndarray  # [1, H, W] in {0, 1}
    id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be [3,H,W], got {self.image.shape}")
        if self.mask.shape != (1,) + self.image.shape[1:]:
            raise ValueError(f"mask {self.mask.shape} does not match image {self.image.shape}")


# ------------------------------------------------------------------ image I/O

def _pnm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1  # single whitespace byte ends the header


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    """Binary P5 (gray) / P6 (RGB) reader, 8-bit only."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM file")
    (w, h, maxval), start = _pnm_tokens(buf[2:], 3)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PNM is supported")
    ch = 1 if magic == b"P5" else 3
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * ch, offset=2 + start)
    return data.reshape(h, w) if ch == 1 else data.reshape(h, w, 3)


def write_pnm(path: str | os.PathLike, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim == 2:
        header = b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0])
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"P6\n%d %d\n255\n" % (arr.shape[1], arr.shape[0])
    else:
        raise ValueError(f"cannot write array of shape {arr.shape} as PNM")
    Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())


def read_image(path: str | os.PathLike) -> np.ndarray:
    """8-bit image as uint8 [H, W] or [H, W, 3]."""
    path = Path(path)
    try:
        if path.suffix.lower() in (".pgm", ".ppm", ".pnm"):
            return read_pnm(path)
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK", "YCbCr") else "L")
            return np.asarray(im, dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def write_image(path: str | os.PathLike, arr: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".ppm", ".pnm"):
        write_pnm(path, arr)
    else:
        Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def resize_array(img: np.ndarray, size: tuple[int, int], mode: str = "bilinear") -> np.ndarray:
    """Resize a [C, H, W] float array with half-pixel-center interpolation."""
    c, h, w = img.shape
    if (h, w) == tuple(size):
        return img.copy()
    rh = resize_matrix(h, size[0], mode)
    rw = resize_matrix(w, size[1], mode)
    return rh @ img @ rw.T


def _check_size(size: tuple[int, int]) -> None:
    if size[0] % 32 or size[1] % 32 or min(size) <= 0:
        raise ValueError(f"target size must be positive multiples of 32, got {size}")


def image_to_chw(raw: np.ndarray) -> np.ndarray:
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    return raw.transpose(2, 0, 1).astype(np.float64) / 255.0


def load_sample(image_path, mask_path, size: int | tuple[int, int] = 64, sample_id: str | None = None) -> Sample:
    size = (size, size) if isinstance(size, int) else tuple(size)
    _check_size(size)
    raw_img = read_image(image_path)
    raw_mask = read_image(mask_path)
    if raw_img.shape[:2] != raw_mask.shape[:2]:
        raise OSError(f"size mismatch: image {image_path} is {raw_img.shape[:2]}, "
                      f"mask {mask_path} is {raw_mask.shape[:2]}")
    img = resize_array(image_to_chw(raw_img), size, "bilinear")
    gray = raw_mask if raw_mask.ndim == 2 else raw_mask.mean(axis=2)
    mask = resize_array((gray >= 128).astype(np.float64)[None], size, "nearest")
    return Sample(np.clip(img, 0.0, 1.0), (mask > 0.5).astype(np.float64),
                  sample_id or Path(image_path).stem)


def save_sample(sample: Sample, image_path, mask_path) -> None:
    write_image(image_path, to_uint8(sample.image.transpose(1, 2, 0)))
    write_image(mask_path, (sample.mask[0] > 0.5).astype(np.uint8) * 255)


# ------------------------------------------------------------------ synthesis

@dataclass(frozen=True)
class Shape:
    kind: str  # "ellipse" | "rect"
    cx: float
    cy: float
    a: float  # semi-axis / half-width along the rotated x axis
    b: float
    angle: float = 0.0  # radians


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    size: int = 64
    n_small: int = 2
    n_large: int = 1
    slender: bool = False
    clutter: float = 0.3  # 0 disables texture noise and distractors
    polarity: str = "mixed"  # "bright" | "dark" | "mixed"
    contrast: tuple[float, float] = (0.3, 0.5)
    background: tuple[float, float] = (0.3, 0.6)
    river_width: tuple[float, float] = (2.0, 4.0)
    shapes: tuple[Shape, ...] | None = None  # explicit salient objects, replaces random inventory
    supersample: int = 4


def _grid(size: int, ss: int) -> tuple[np.ndarray, np.ndarray]:
    """Sub-pixel sample coordinates, shape (size, size, ss*ss)."""
    off = (np.arange(ss) + 0.5) / ss
    c = (np.arange(size)[:, None] + off[None, :]).reshape(-1)
    yy, xx = np.meshgrid(c, c, indexing="ij")
    yy = yy.reshape(size, ss, size, ss).transpose(0, 2, 1, 3).reshape(size, size, ss * ss)
    xx = xx.reshape(size, ss, size, ss).transpose(0, 2, 1, 3).reshape(size, size, ss * ss)
    return yy, xx


def shape_coverage(shape: Shape, size: int, ss: int = 4) -> np.ndarray:
    """Fraction of each pixel covered by the shape (pixel (i, j) spans [j, j+1) x [i, i+1))."""
    yy, xx = _grid(size, ss)
    dx, dy = xx - shape.cx, yy - shape.cy
    ca, sa = np.cos(shape.angle), np.sin(shape.angle)
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy
    if shape.kind == "ellipse":
        inside = (u / shape.a) ** 2 + (v / shape.b) ** 2 <= 1.0
    elif shape.kind == "rect":
        inside = (np.abs(u) <= shape.a) & (np.abs(v) <= shape.b)
    else:
        raise ValueError(f"unknown shape kind {shape.kind!r}")
    return inside.mean(axis=2)


def bezier(p0, p1, p2, p3, n: int = 400) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = np.asarray([p0, p1, p2, p3], dtype=np.float64)
    return ((1 - t) ** 3 * pts[0] + 3 * (1 - t) ** 2 * t * pts[1]
            + 3 * (1 - t) * t ** 2 * pts[2] + t ** 3 * pts[3])


def curve_coverage(points: np.ndarray, width: float, size: int, ss: int = 4) -> np.ndarray:
    """Coverage of a stroke of the given width along a dense polyline (x, y)."""
    yy, xx = _grid(size, ss)
    best = np.full(xx.shape, np.inf)
    a, b = points[:-1], points[1:]
    for (ax, ay), (bx, by) in zip(a, b):
        vx, vy = bx - ax, by - ay
        t = np.clip(((xx - ax) * vx + (yy - ay) * vy) / max(vx * vx + vy * vy, 1e-12), 0.0, 1.0)
        d2 = (xx - ax - t * vx) ** 2 + (yy - ay - t * vy) ** 2
        np.minimum(best, d2, out=best)
    return (best <= (width / 2) ** 2).mean(axis=2)


def _river(rng: np.random.Generator, size: int) -> np.ndarray:
    """Control points of a curve entering and leaving through opposite frame edges."""
    lo, hi = 0.15 * size, 0.85 * size
    ends = (rng.uniform(lo, hi), rng.uniform(lo, hi))
    mids = rng.uniform(lo, hi, size=2)
    if rng.random() < 0.5:  # left -> right
        return np.array([[-2.0, ends[0]], [size / 3, mids[0]], [2 * size / 3, mids[1]], [size + 2.0, ends[1]]])
    return np.array([[ends[0], -2.0], [mids[0], size / 3], [mids[1], 2 * size / 3], [ends[1], size + 2.0]])


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    coarse = rng.standard_normal((1, cells, cells))
    return resize_array(coarse, (size, size), "bilinear")[0]


def _random_shapes(rng: np.random.Generator, spec: SceneSpec) -> list[Shape]:
    s = spec.size
    out = []
    for n, (lo, hi) in ((spec.n_large, (0.14, 0.28)), (spec.n_small, (0.04, 0.08))):
        for _ in range(n):
            a = rng.uniform(lo, hi) * s
            b = a * rng.uniform(0.5, 1.0)
            kind = "ellipse" if rng.random() < 0.6 else "rect"
            if kind == "rect":
                a, b = a * 0.8, b * 0.8
            margin = a + 1
            out.append(Shape(kind, rng.uniform(margin, s - margin), rng.uniform(margin, s - margin),
                             a, b, rng.uniform(0, np.pi)))
    return out


def synth_scene(spec: SceneSpec) -> Sample:
    """Render one scene; the mask covers exactly the salient shapes (and river)."""
    rng = np.random.default_rng(spec.seed)
    s, ss = spec.size, spec.supersample
    base = rng.uniform(*spec.background)
    tint = rng.uniform(-0.05, 0.05, size=3)
    img = np.full((3, s, s), base) + tint[:, None, None]
    if spec.clutter > 0:
        tex = 0.12 * _smooth_noise(rng, s, 4) + 0.06 * _smooth_noise(rng, s, 12)
        img += spec.clutter * tex[None]
        # low-contrast distractors: visible but not salient
        for _ in range(int(round(spec.clutter * 8))):
            d = Shape("ellipse" if rng.random() < 0.5 else "rect", rng.uniform(0, s), rng.uniform(0, s),
                      rng.uniform(0.03, 0.12) * s, rng.uniform(0.03, 0.12) * s, rng.uniform(0, np.pi))
            img += rng.uniform(-0.08, 0.08) * shape_coverage(d, s, ss)[None]

    shapes = list(spec.shapes) if spec.shapes is not None else _random_shapes(rng, spec)
    salient = np.zeros((s, s))
    for shp in shapes:
        cov = shape_coverage(shp, s, ss)
        sign = {"bright": 1.0, "dark": -1.0}.get(spec.polarity, 1.0 if rng.random() < 0.5 else -1.0)
        colour = base + sign * rng.uniform(*spec.contrast) + rng.uniform(-0.05, 0.05, size=3)
        img = img * (1 - cov[None]) + colour[:, None, None] * cov[None]
        salient = np.maximum(salient, cov)
    if spec.slender:
        width = rng.uniform(*spec.river_width)
        cov = curve_coverage(bezier(*_river(rng, s)), width, s, ss)
        sign = -1.0 if spec.polarity == "dark" or (spec.polarity == "mixed" and rng.random() < 0.5) else 1.0
        colour = base + sign * rng.uniform(*spec.contrast) + rng.uniform(-0.05, 0.05, size=3)
        img = img * (1 - cov[None]) + colour[:, None, None] * cov[None]
        salient = np.maximum(salient, cov)
    if spec.clutter > 0:
        img += spec.clutter * 0.03 * rng.standard_normal(img.shape)
    # quantize to 8-bit levels so PNG export round-trips exactly
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    mask = (salient >= 0.5).astype(np.float64)[None]
    return Sample(img, mask, f"synth_{spec.seed:06d}")


def synth_dataset(n: int, seed: int = 0, size: int = 64, **overrides) -> list[Sample]:
    """``n`` scenes with per-scene seeds derived from ``seed``; every third has a river."""
    seeds = np.random.SeedSequence(seed).generate_state(n)
    out = []
    for i, sd in enumerate(seeds):
        kw = dict(seed=int(sd), size=size, slender=(i % 3 == 2))
        kw.update(overrides)
        smp = synth_scene(SceneSpec(**kw))
        smp.id = f"synth_{seed}_{i:04d}"
        out.append(smp)
    return out


# ---------------------------------------------------------------- augmentation

@dataclass(frozen=True)
class AugmentParams:
    hflip: bool = False
    vflip: bool = False
    rot90: int = 0  # quarter turns counter-clockwise


def draw_augment(rng) -> AugmentParams:
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)
    k = int(rng.integers(0, 4))
    return AugmentParams(hflip, vflip, k)


def apply_augment(arr: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Apply to a [C, H, W] array."""
    if params.hflip:
        arr = arr[:, :, ::-1]
    if params.vflip:
        arr = arr[:, ::-1, :]
    if params.rot90:
        arr = np.rot90(arr, params.rot90, axes=(1, 2))
    return np.ascontiguousarray(arr)


def augment(sample: Sample, rng) -> Sample:
    """Random h/v flip (p=0.5 each) and rotation by a multiple of 90 degrees."""
    params = draw_augment(rng)
    return Sample(apply_augment(sample.image, params), apply_augment(sample.mask, params), sample.id)


# ------------------------------------------------------------------- manifest

@dataclass(frozen=True)
class ManifestEntry:
    image: str
    mask: str
    split: str = "train"


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def split(self, tag: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == tag]

    def validate(self) -> None:
        seen: dict[str, str] = {}
        for e in self.entries:
            for p in (e.image, e.mask):
                if not Path(p).exists():
                    raise OSError(f"manifest path does not exist: {p}")
            if seen.setdefault(e.image, e.split) != e.split:
                raise ValueError(f"{e.image} appears in splits {seen[e.image]!r} and {e.split!r}")

    def write(self, path: str | os.PathLike) -> None:
        lines = [f"{e.image}\t{e.mask}\t{e.split}\n" for e in self.entries]
        Path(path).write_text("".join(lines))


def read_manifest(path: str | os.PathLike, validate: bool = True) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise ValueError(f"{path}:{lineno}: expected image<TAB>mask<TAB>split")
        img, msk = (p if os.path.isabs(p) else str(path.parent / p) for p in parts[:2])
        entries.append(ManifestEntry(img, msk, parts[2].strip() if len(parts) == 3 else "train"))
    m = Manifest(entries)
    if validate:
        m.validate()
    return m


def load_manifest_samples(entries: Sequence[ManifestEntry], size) -> list[Sample]:
    return [load_sample(e.image, e.mask, size) for e in entries]


def write_dataset(samples: Iterable[Sample], out_dir: str | os.PathLike, split: str = "train",
                  ext: str = ".png") -> Manifest:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for smp in samples:
        ip = out / "images" / f"{smp.id}{ext}"
        mp = out / "masks" / f"{smp.id}{ext if ext != '.ppm' else '.pgm'}"
        save_sample(smp, ip, mp)
        entries.append(ManifestEntry(f"images/{ip.name}", f"masks/{mp.name}", split))
    m = Manifest(entries)
    m.write(out / "manifest.tsv")
    return m


def parse_synth_spec(text: str) -> dict:
    """``synth:n=8,size=64,seed=0,clutter=0.3`` -> keyword dict."""
    body = text.split(":", 1)[1] if text.startswith("synth") else text
    out: dict = {}
    for item in filter(None, (s.strip() for s in body.split(","))):
        key, _, val = item.partition("=")
        if not _:
            raise ValueError(f"bad synth spec item {item!r}")
        if key in ("n", "size", "seed", "n_small", "n_large"):
            out[key] = int(val)
        elif key == "clutter":
            out[key] = float(val)
        elif key == "slender":
            out[key] = val.lower() in ("1", "true", "yes")
        elif key == "polarity":
            out[key] = val
        else:
            raise ValueError(f"unknown synth spec key {key!r}")
    return out
