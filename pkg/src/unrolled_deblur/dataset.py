"""Synthetic text-like corpora, surrogate quality scores and preprocessing.

Ground truths are three lines of procedural glyphs drawn as connected subsets
of a seven-segment cell (white strokes on black).  The surrogate score plays
the role of a character recogniser: the percentage of glyphs whose strokes
are bright and whose immediate surroundings are dark in a restored image.

Corpus layout on disk::

    <dir>/gt_000.pgm, obs_000.pgm, ...
    <dir>/manifest.tsv    index, gt, obs, seed, radius, noise_std, score
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .energy import EnergyParams
from .errors import InvalidInputError, InvalidParameterError
from .imgcore import (as_image, convolve, disc_psf, estimate_background, flip_intensity,
                      resize)
from .pgm import read_pgm, write_pgm
from .svr import SvrTrainSet
from .unroll import UnrollConfig, restore

log = logging.getLogger(__name__)

MANIFEST = "manifest.tsv"
MANIFEST_FIELDS = ("index", "gt", "obs", "seed", "radius", "noise_std", "score")

# segment order: top, upper-right, lower-right, bottom, lower-left, upper-left, middle
_SEGMENT_LINKS = {
    0: (1, 5), 1: (0, 2, 6), 2: (1, 3, 6), 3: (2, 4),
    4: (3, 5, 6), 5: (0, 4, 6), 6: (1, 2, 4, 5),
}


@dataclass(frozen=True)
class SynthSpec:
    height: int = 128
    width: int = 128
    glyphs_per_line: int = 5
    lines: int = 3
    glyph_height: int = 24
    glyph_width: int = 14
    stroke: int = 2
    jitter: int = 2
    radius: float = 3.0
    noise_std: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if self.radius <= 0:
            raise InvalidParameterError("radius must be positive")
        if self.noise_std < 0:
            raise InvalidParameterError("noise std must be non-negative")
        if min(self.glyphs_per_line, self.lines, self.stroke) < 1:
            raise InvalidParameterError("layout counts must be positive")
        if 3 * self.stroke > min(self.glyph_height, self.glyph_width):
            raise InvalidParameterError("stroke too wide for the glyph cell")
        need_w = self.glyphs_per_line * (self.glyph_width + 2 * self.jitter + 6) + 8
        need_h = self.lines * (self.glyph_height + 2 * self.jitter + 6) + 8
        if need_w > self.width or need_h > self.height:
            raise InvalidInputError(
                f"{self.height}x{self.width} too small for {self.lines}x{self.glyphs_per_line} glyphs")


def _random_segments(rng: np.random.Generator) -> list[int]:
    # grow a connected subset of the seven-segment adjacency graph
    size = int(rng.integers(2, 8))
    chosen = [int(rng.integers(7))]
    while len(chosen) < size:
        frontier = sorted({n for s in chosen for n in _SEGMENT_LINKS[s]} - set(chosen))
        chosen.append(int(rng.choice(frontier)))
    return chosen


def _draw_glyph(canvas: np.ndarray, top: int, left: int, spec: SynthSpec, segs) -> None:
    h, w, s = spec.glyph_height, spec.glyph_width, spec.stroke
    mid = top + (h - s) // 2
    boxes = {
        0: (top, top + s, left, left + w),
        1: (top, mid + s, left + w - s, left + w),
        2: (mid, top + h, left + w - s, left + w),
        3: (top + h - s, top + h, left, left + w),
        4: (mid, top + h, left, left + s),
        5: (top, mid + s, left, left + s),
        6: (mid, mid + s, left, left + w),
    }
    for k in segs:
        r0, r1, c0, c1 = boxes[k]
        canvas[r0:r1, c0:c1] = 1.0


def gen_ground_truth(spec: SynthSpec) -> np.ndarray:
    """Binary image of ``lines`` rows of glyphs, deterministic in ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])
    img = np.zeros((spec.height, spec.width))
    cell_w = spec.width // spec.glyphs_per_line
    cell_h = spec.height // spec.lines
    x0 = (spec.width - spec.glyphs_per_line * cell_w) // 2
    y0 = (spec.height - spec.lines * cell_h) // 2
    for line in range(spec.lines):
        for g in range(spec.glyphs_per_line):
            jy, jx = rng.integers(-spec.jitter, spec.jitter + 1, size=2)
            top = y0 + line * cell_h + (cell_h - spec.glyph_height) // 2 + int(jy)
            left = x0 + g * cell_w + (cell_w - spec.glyph_width) // 2 + int(jx)
            _draw_glyph(img, top, left, spec, _random_segments(rng))
    return img


def gen_observation(gt, r: float, noise_std: float, seed: int = 0) -> np.ndarray:
    """Blur with the disc PSF, add Gaussian noise, clamp to [0, 1]."""
    gt = as_image(gt)
    if not r > 0:
        raise InvalidParameterError("radius must be positive")
    if noise_std < 0:
        raise InvalidParameterError("noise std must be non-negative")
    blurred = convolve(gt, disc_psf(r))
    if noise_std > 0:
        rng = np.random.default_rng([seed, 1])
        blurred = blurred + noise_std * rng.standard_normal(gt.shape)
    return np.clip(blurred, 0.0, 1.0)


def glyph_labels(gt) -> tuple[np.ndarray, int]:
    """Connected glyph components (8-connectivity) of a binary ground truth."""
    return ndimage.label(as_image(gt) > 0.5, structure=np.ones((3, 3)))


def surrogate_score(u, gt, margin: int = 3, frac: float = 0.8) -> float:
    """Percentage of glyphs of ``gt`` recognisable in ``u``.

    A glyph counts when at least ``frac`` of its stroke pixels exceed 0.5 in
    ``u`` and at least ``frac`` of the non-glyph pixels within ``margin`` of
    it stay below 0.5.
    """
    u = as_image(u)
    gt = as_image(gt)
    if u.shape != gt.shape:
        raise InvalidInputError("image and ground truth shapes differ")
    labels, n = glyph_labels(gt)
    if n == 0:
        return 0.0
    fg_all = labels > 0
    bright = u > 0.5
    ring = np.ones((3, 3), bool)
    hits = 0
    for sl, lab in zip(ndimage.find_objects(labels), range(1, n + 1)):
        pad = margin + 1
        win = tuple(slice(max(s.start - pad, 0), s.stop + pad) for s in sl)
        fg = labels[win] == lab
        near = ndimage.binary_dilation(fg, ring, iterations=margin) & ~fg_all[win]
        fg_ok = bright[win][fg].mean() >= frac
        bg_ok = (~bright[win][near]).mean() >= frac if near.any() else True
        hits += bool(fg_ok and bg_ok)
    return 100.0 * hits / n


# ------------------------------------------------------------------ corpora

def write_corpus(out_dir, n: int, spec: SynthSpec) -> list[dict]:
    """Generate ``n`` (ground truth, observation) pairs and a manifest."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n):
        seed = spec.seed * 100_003 + i
        s = replace(spec, seed=seed)
        gt = gen_ground_truth(s)
        obs = gen_observation(gt, s.radius, s.noise_std, seed)
        gname, oname = f"gt_{i:03d}.pgm", f"obs_{i:03d}.pgm"
        write_pgm(out / gname, gt)
        write_pgm(out / oname, obs)
        rows.append({"index": i, "gt": gname, "obs": oname, "seed": seed,
                     "radius": repr(float(s.radius)), "noise_std": repr(float(s.noise_std)),
                     "score": repr(surrogate_score(obs, gt))})
    with open(out / MANIFEST, "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, MANIFEST_FIELDS, delimiter="\t", lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
    return rows


def read_corpus(corpus_dir) -> list[tuple[np.ndarray, np.ndarray, dict]]:
    """Load ``(observation, ground truth, manifest row)`` triples."""
    d = Path(corpus_dir)
    path = d / MANIFEST
    if not path.exists():
        raise InvalidInputError(f"{d}: no {MANIFEST}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    return [(read_pgm(d / row["obs"]), read_pgm(d / row["gt"]), row) for row in rows]


# ------------------------------------------------------------ SVR training set

def _decile(score: float) -> int:
    # [0,10], ]10,20], ..., ]90,100]
    return max(0, int(np.ceil(score / 10.0)) - 1)


def build_svr_dataset(base: SynthSpec = SynthSpec(), per_decile: int = 12, seed: int = 0,
                      downsample: int = 2, budget: int = 600, K: int = 40,
                      return_images: bool = False):
    """Score-stratified training set for the quality predictor.

    Candidates are ground truths, observations over a range of blur radii
    and noise levels, unrolled reconstructions with random (mostly wrong)
    parameters, composites showing a random subset of glyphs clean and the
    rest blurred, and constant images with and without faint noise.  Each
    decile of the score range keeps at most ``per_decile`` samples.
    """
    base.validate()
    rng = np.random.default_rng([seed, 7])
    bins: list[list] = [[] for _ in range(10)]
    count = 0
    kinds = ("gt", "obs", "obs", "rec", "rec", "rec", "const", "mix", "mix", "mix")

    def offer(img, score):
        b = bins[_decile(score)]
        if len(b) < per_decile:
            b.append((img, score))

    while count < budget and any(len(b) < per_decile for b in bins):
        count += 1
        gt = gen_ground_truth(replace(base, seed=int(rng.integers(2**31))))
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "gt":
            offer(gt, surrogate_score(gt, gt))
        elif kind == "const":
            img = np.full(gt.shape, rng.uniform(0.0, 1.0))
            if rng.random() < 0.5:
                img = np.clip(img + 0.01 * rng.standard_normal(gt.shape), 0, 1)
            offer(img, surrogate_score(img, gt))
        else:
            r = rng.uniform(0.5, 2.0 * base.radius)
            noise = rng.uniform(0.0, 2.0 * base.noise_std)
            obs = gen_observation(gt, r, noise, int(rng.integers(2**31)))
            if kind == "obs":
                offer(obs, surrogate_score(obs, gt))
            elif kind == "mix":
                # a random share of the glyphs is shown clean, the rest degraded
                labels, n = glyph_labels(gt)
                keep = np.flatnonzero(rng.random(n) < rng.uniform(0.0, 1.0)) + 1
                mask = ndimage.binary_dilation(np.isin(labels, keep), np.ones((3, 3), bool),
                                               iterations=int(np.ceil(2 * r)) + 2)
                img = np.where(mask, gt, obs)
                offer(img, surrogate_score(img, gt))
            else:
                p = EnergyParams(r=r * rng.uniform(0.6, 2.2), rho=rng.uniform(0, 0.5),
                                 gamma=10 ** rng.uniform(-3.5, -1), delta=10 ** rng.uniform(-3, -1))
                cfg = UnrollConfig.constant(K, rng.uniform(0.3, 2.0))
                rec = restore(obs, p, cfg)
                offer(rec, surrogate_score(rec, gt))
    short = [i for i, b in enumerate(bins) if len(b) < per_decile]
    if short:
        log.warning("score deciles %s under-filled after %d candidates", short, count)
    samples = [s for b in bins for s in b]
    images = [im for im, _ in samples]
    ts = SvrTrainSet.from_images(images, [sc for _, sc in samples], downsample)
    return (ts, images) if return_images else ts


# ------------------------------------------------------------- preprocessing

@dataclass(frozen=True)
class PreprocessConfig:
    flip: bool = True
    factor: float = 1.0
    frame_width: int = 8


def preprocess(raw, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Flip, downsample, subtract the frame-estimated background, clamp."""
    x = as_image(raw)
    if cfg.flip:
        x = flip_intensity(x)
    x = resize(x, cfg.factor)
    x = x - estimate_background(x, cfg.frame_width)
    return np.clip(x, 0.0, 1.0)
