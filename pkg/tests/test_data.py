import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from mscnet import data as D


class FixedRng:
    """Stands in for a Generator: every coin lands 'no', rotation 0."""

    def random(self):
        return 0.99

    def integers(self, lo, hi):
        return 0


# ------------------------------------------------------------------ I/O

def test_white_mask_and_resize(tmp_path):
    D.write_image(tmp_path / "img.png", np.random.default_rng(0).integers(0, 256, (80, 100, 3), dtype=np.uint8))
    D.write_image(tmp_path / "mask.png", np.full((80, 100), 255, np.uint8))
    s = D.load_sample(tmp_path / "img.png", tmp_path / "mask.png", 64)
    assert s.image.shape == (3, 64, 64) and s.mask.shape == (1, 64, 64)
    assert np.all(s.mask == 1.0)
    assert s.image.min() >= 0 and s.image.max() <= 1


def test_mask_threshold_128(tmp_path):
    m = np.zeros((32, 32), np.uint8)
    m[:, :16] = 127
    m[:, 16:] = 128
    D.write_image(tmp_path / "m.pgm", m)
    D.write_image(tmp_path / "i.pgm", m)
    s = D.load_sample(tmp_path / "i.pgm", tmp_path / "m.pgm", 32)
    assert s.mask[0, :, :16].sum() == 0 and s.mask[0, :, 16:].all()


@pytest.mark.parametrize("ext", [".png", ".ppm"])
def test_sample_round_trip(tmp_path, ext):
    s = D.synth_dataset(1, seed=5)[0]
    mask_ext = ".pgm" if ext == ".ppm" else ext
    D.save_sample(s, tmp_path / f"a{ext}", tmp_path / f"a_mask{mask_ext}")
    back = D.load_sample(tmp_path / f"a{ext}", tmp_path / f"a_mask{mask_ext}", 64)
    np.testing.assert_array_equal(back.image, s.image)
    np.testing.assert_array_equal(back.mask, s.mask)


def test_pnm_round_trip(tmp_path):
    rgb = np.random.default_rng(1).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    D.write_pnm(tmp_path / "x.ppm", rgb)
    np.testing.assert_array_equal(D.read_pnm(tmp_path / "x.ppm"), rgb)
    g = rgb[:, :, 0]
    D.write_pnm(tmp_path / "x.pgm", g)
    np.testing.assert_array_equal(D.read_pnm(tmp_path / "x.pgm"), g)


def test_io_errors_name_the_path(tmp_path):
    with pytest.raises(OSError, match="missing.png"):
        D.read_image(tmp_path / "missing.png")
    D.write_image(tmp_path / "i.png", np.zeros((10, 10), np.uint8))
    D.write_image(tmp_path / "m.png", np.zeros((12, 10), np.uint8))
    with pytest.raises(OSError, match="m.png"):
        D.load_sample(tmp_path / "i.png", tmp_path / "m.png", 32)
    (tmp_path / "bad.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(OSError):
        D.read_image(tmp_path / "bad.pgm")


# ------------------------------------------------------------------ synthesis

def test_centered_ellipse_area():
    a, b = 12.0, 8.0
    spec = D.SceneSpec(seed=3, clutter=0.0, shapes=(D.Shape("ellipse", 32.0, 32.0, a, b),))
    count = D.synth_scene(spec).mask.sum()
    perimeter = math.pi * (3 * (a + b) - math.sqrt((3 * a + b) * (a + 3 * b)))
    assert abs(count - math.pi * a * b) <= perimeter


@pytest.mark.parametrize("seed", range(6))
def test_river_is_one_thin_component_across_the_frame(seed):
    s = D.synth_scene(D.SceneSpec(seed=seed, n_small=0, n_large=0, slender=True, clutter=0.0)).mask[0]
    labels, n = ndimage.label(s, structure=np.ones((3, 3)))
    assert n == 1
    edges = [s[0].any(), s[-1].any(), s[:, 0].any(), s[:, -1].any()]
    assert (edges[0] and edges[1]) or (edges[2] and edges[3])
    assert s.sum() < 0.2 * s.size  # thin


def test_synthesis_is_deterministic():
    a = D.synth_scene(D.SceneSpec(seed=11, slender=True))
    b = D.synth_scene(D.SceneSpec(seed=11, slender=True))
    assert a.image.tobytes() == b.image.tobytes() and a.mask.tobytes() == b.mask.tobytes()


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), size=st.sampled_from([32, 64]), slender=st.booleans(),
       clutter=st.floats(0, 1), polarity=st.sampled_from(["bright", "dark", "mixed"]))
def test_synth_samples_satisfy_invariants(seed, size, slender, clutter, polarity):
    s = D.synth_scene(D.SceneSpec(seed=seed, size=size, slender=slender, clutter=clutter, polarity=polarity,
                                  supersample=2))
    assert s.image.shape == (3, size, size) and size % 32 == 0
    assert set(np.unique(s.mask)) <= {0.0, 1.0}
    assert s.image.min() >= 0 and s.image.max() <= 1


# ------------------------------------------------------------------ augmentation

def test_identity_draw_leaves_sample_unchanged():
    s = D.synth_dataset(1)[0]
    out = D.augment(s, FixedRng())
    np.testing.assert_array_equal(out.image, s.image)
    np.testing.assert_array_equal(out.mask, s.mask)


def test_double_hflip_is_identity():
    s = D.synth_dataset(1)[0]
    p = D.AugmentParams(hflip=True)
    np.testing.assert_array_equal(D.apply_augment(D.apply_augment(s.image, p), p), s.image)


def _oracle(mask, p):
    """Independent pixel-permutation: map every destination pixel back to its source."""
    h, w = mask.shape
    out = np.empty_like(mask)
    for i in range(h):
        for j in range(w):
            y, x = i, j
            for _ in range(p.rot90):  # undo one ccw quarter turn: (y, x) <- (x, w-1-y)
                y, x = x, w - 1 - y
            if p.vflip:
                y = h - 1 - y
            if p.hflip:
                x = w - 1 - x
            out[i, j] = mask[y, x]
    return out


@pytest.mark.parametrize("seed", range(8))
def test_augment_alignment_against_oracle(seed):
    rng = np.random.default_rng(seed)
    s = D.synth_dataset(1, seed=seed, size=32)[0]
    p = D.draw_augment(np.random.default_rng(seed))
    out = D.augment(s, rng)
    want = _oracle(s.mask[0], p)
    inter = np.logical_and(out.mask[0], want).sum()
    union = np.logical_or(out.mask[0], want).sum()
    assert union == 0 or inter / union == 1.0
    # image and mask moved together
    np.testing.assert_array_equal(out.image[0], _oracle(s.image[0], p))
    assert np.array_equal(np.unique(out.mask, return_counts=True), np.unique(s.mask, return_counts=True))


# ------------------------------------------------------------------ manifests

def test_write_and_read_dataset(tmp_path):
    samples = D.synth_dataset(3, seed=2, size=32)
    D.write_dataset(samples, tmp_path)
    man = D.read_manifest(tmp_path / "manifest.tsv")
    assert len(man.entries) == 3 and {e.split for e in man.entries} == {"train"}
    loaded = D.load_manifest_samples(man.entries, 32)
    for a, b in zip(samples, loaded):
        np.testing.assert_array_equal(a.image, b.image)


def test_manifest_rejects_missing_and_overlapping(tmp_path):
    D.write_dataset(D.synth_dataset(1, size=32), tmp_path)
    (tmp_path / "m1.tsv").write_text("images/nope.png\tmasks/nope.png\ttrain\n")
    with pytest.raises(OSError):
        D.read_manifest(tmp_path / "m1.tsv")
    line = "images/synth_0_0000.png\tmasks/synth_0_0000.png"
    (tmp_path / "m2.tsv").write_text(f"{line}\ttrain\n{line}\ttest\n")
    with pytest.raises(ValueError):
        D.read_manifest(tmp_path / "m2.tsv")
    (tmp_path / "m3.tsv").write_text("only-one-column\n")
    with pytest.raises(ValueError):
        D.read_manifest(tmp_path / "m3.tsv", validate=False)


def test_parse_synth_spec():
    assert D.parse_synth_spec("synth:n=8,size=64,clutter=0.5") == {"n": 8, "size": 64, "clutter": 0.5}
    with pytest.raises(ValueError):
        D.parse_synth_spec("synth:bogus=1")
