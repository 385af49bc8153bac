"""Synthetic two-modality saliency data and dataset directories.

Each sample is a binary ground-truth mask built from a few random shapes.
Every modality observes the box-blurred mask plus Gaussian noise whose
standard deviation shrinks linearly with that modality's quality.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qfuse.imageio import read_image, write_image
from qfuse.tensor import DimensionError

MODALITIES = 2


@dataclass
class SynthConfig:
    image_size: int = 64
    n_samples: int = 16
    quality: tuple | str = "random"
    blur_radius: int = 2
    noise_sigma_max: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 16 or self.image_size % 8:
            raise ValueError(f"image_size must be >= 16 and divisible by 8, got {self.image_size}")
        if self.n_samples < 0:
            raise ValueError("n_samples must be non-negative")
        if isinstance(self.quality, str):
            if self.quality != "random":
                raise ValueError(f"quality must be a pair or 'random', got {self.quality!r}")
        else:
            q = tuple(float(v) for v in self.quality)
            if len(q) != MODALITIES or not all(0.0 <= v <= 1.0 for v in q):
                raise ValueError(f"quality must be two values in [0, 1], got {self.quality!r}")
            self.quality = q
        if self.blur_radius < 0 or self.noise_sigma_max < 0:
            raise ValueError("blur_radius and noise_sigma_max must be non-negative")


@dataclass
class SaliencySample:
    images: list
    gt: np.ndarray | None
    qualities: tuple = field(default=())
    name: str = ""

    def __post_init__(self):
        shapes = {np.shape(im) for im in self.images}
        if self.gt is not None:
            shapes.add(np.shape(self.gt))
        if len(shapes) != 1:
            raise DimensionError(f"sample {self.name or '?'} mixes map sizes {sorted(shapes)}")

    @property
    def size(self):
        return np.shape(self.images[0])


def box_blur(mask, radius):
    """Mean over a (2r+1)^2 window with edge replication, via integer sums."""
    if radius == 0:
        return mask.astype(np.float64)
    k = 2 * radius + 1
    padded = np.pad(mask.astype(np.int64), radius, mode="edge")
    c = np.pad(padded.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    h, w = mask.shape
    sums = c[k : k + h, k : k + w] - c[:h, k : k + w] - c[k : k + h, :w] + c[:h, :w]
    return sums / float(k * k)


def _shape_mask(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    cy, cx = rng.uniform(0.2, 0.8, 2) * size
    ry, rx = rng.uniform(0.12, 0.3, 2) * size
    if rng.random() < 0.5:
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return (np.abs(yy - cy) <= ry * 0.85) & (np.abs(xx - cx) <= rx * 0.85)


def random_mask(rng, size, coverage=(0.10, 0.40)):
    while True:
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(rng.integers(1, 4)):
            mask |= _shape_mask(rng, size)
        if coverage[0] <= mask.mean() <= coverage[1]:
            return mask.astype(np.uint8)


def sample_rng(seed, index):
    return np.random.default_rng([seed, index])


def generate_sample(cfg: SynthConfig, rng) -> SaliencySample:
    gt = random_mask(rng, cfg.image_size)
    if cfg.quality == "random":
        qualities = tuple(float(q) for q in rng.uniform(0.0, 1.0, MODALITIES))
    else:
        qualities = cfg.quality
    blurred = box_blur(gt, cfg.blur_radius)
    images = []
    for q in qualities:
        sigma = cfg.noise_sigma_max * (1.0 - q)
        noise = rng.normal(0.0, 1.0, blurred.shape) * sigma
        images.append(np.clip(blurred + noise, 0.0, 1.0).astype(np.float32))
    return SaliencySample(images, gt.astype(np.float32), qualities)


def generate_samples(cfg: SynthConfig):
    samples = []
    for i in range(cfg.n_samples):
        s = generate_sample(cfg, sample_rng(cfg.seed, i))
        s.name = f"sample_{i:04d}"
        samples.append(s)
    return samples


def sample_paths(directory, name):
    d = Path(directory)
    return [d / f"{name}_mod{m + 1}.pgm" for m in range(MODALITIES)] + [d / f"{name}_gt.pgm"]


def generate_dataset(cfg: SynthConfig, out_dir):
    """Write ``sample_NNNN_{mod1,mod2,gt}.pgm`` files plus ``manifest.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = generate_samples(cfg)
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "quality1", "quality2", "seed"])
        for s in samples:
            *mods, gt_path = sample_paths(out, s.name)
            for path, img in zip(mods, s.images):
                write_image(path, img)
            write_image(gt_path, s.gt)
            writer.writerow([s.name, repr(s.qualities[0]), repr(s.qualities[1]), cfg.seed])
    return samples


def load_sample(paths, name=""):
    """Load modality maps and (optionally) a GT mask, binarised at 0.5."""
    *mods, gt_path = paths
    images = [read_image(p) for p in mods]
    gt = None
    if gt_path is not None:
        gt = (read_image(gt_path) >= 0.5).astype(np.float32)
    return SaliencySample(images, gt, name=name)


def load_dataset(directory):
    d = Path(directory)
    manifest = d / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv in {d}")
    samples = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            s = load_sample(sample_paths(d, row["id"]), name=row["id"])
            s.qualities = (float(row["quality1"]), float(row["quality2"]))
            samples.append(s)
    return samples
