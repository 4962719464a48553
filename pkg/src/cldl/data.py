"""Dataset ingestion and generation.

Supports the big-endian IDX format used by MNIST (image magic 0x00000803,
label magic 0x00000801), train-mean subtraction, and a synthetic 2-D
dataset with per-class complexity tiers for controlled specialization
experiments. Labels are 1-based internally; IDX files store them 0-based.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .tensor_ops import RngState

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

TIERS = ("linear", "radial", "xor-like")


class DataFormatError(ValueError):
    """Raised on malformed or inconsistent dataset files."""


@dataclass
class LabeledDataset:
    samples: np.ndarray   # (N, ...) float64
    labels: np.ndarray    # (N,) int, in 1..num_classes
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        if len(self.samples) != len(self.labels):
            raise DataFormatError(
                f"sample count {len(self.samples)} != label count {len(self.labels)}"
            )
        if len(self.labels) and not (
            self.labels.min() >= 1 and self.labels.max() <= self.num_classes
        ):
            raise DataFormatError(
                f"labels outside 1..{self.num_classes}: "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self):
        return len(self.labels)


def _read_exact(f, n, path):
    buf = f.read(n)
    if len(buf) != n:
        raise DataFormatError(f"{path}: truncated file (wanted {n} bytes, got {len(buf)})")
    return buf


def load_idx(images_path, labels_path, num_classes=None, split="train"):
    """Load an IDX image/label file pair; pixels scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad image magic 0x{magic:08x} (expected 0x{IDX_IMAGE_MAGIC:08x})"
            )
        raw = _read_exact(f, count * rows * cols, images_path)
        if f.read(1):
            raise DataFormatError(f"{images_path}: trailing bytes after pixel data")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)

    with open(labels_path, "rb") as f:
        magic, lcount = struct.unpack(">ii", _read_exact(f, 8, labels_path))
        if magic != IDX_LABEL_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad label magic 0x{magic:08x} (expected 0x{IDX_LABEL_MAGIC:08x})"
            )
        lraw = _read_exact(f, lcount, labels_path)
        if f.read(1):
            raise DataFormatError(f"{labels_path}: trailing bytes after label data")
    labels = np.frombuffer(lraw, dtype=np.uint8).astype(np.intp)

    if count != lcount:
        raise DataFormatError(
            f"image count {count} ({images_path}) != label count {lcount} ({labels_path})"
        )
    k = num_classes or (int(labels.max()) + 1 if len(labels) else 1)
    return LabeledDataset(images.astype(np.float64) / 255.0, labels + 1, k, split)


def save_idx(dataset, images_path, labels_path, scale=True):
    """Export a dataset as an IDX pair; pixel values are quantized to u8.

    2-D samples are written as-is; flat vectors become 1 x d images. With
    scale=True values are affinely mapped from [min, max] to [0, 255].
    """
    x = np.asarray(dataset.samples, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3:
        raise DataFormatError(f"can only export (N,H,W) or (N,d) samples, got {x.shape}")
    if scale:
        lo, hi = x.min(), x.max()
        x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    pixels = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
    n, h, w = pixels.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABEL_MAGIC, n))
        f.write((dataset.labels - 1).astype(np.uint8).tobytes())


def preprocess_mean_subtract(train, *others):
    """Center on the train-split mean image; the same mean is applied to all
    other splits. Returns (centered datasets..., mean)."""
    if len(train) == 0:
        raise DataFormatError("cannot compute a mean image from an empty train split")
    mean = train.samples.mean(axis=0)
    out = [
        LabeledDataset(ds.samples - mean, ds.labels, ds.num_classes, ds.split)
        for ds in (train, *others)
    ]
    return (*out, mean)


@dataclass(frozen=True)
class SynthSpec:
    """Per-class complexity tiers for the 2-D synthetic generator.

    Generative model (all draws from the seeded PCG64 stream):
      linear:   point = c_k + noise,   c_k on a circle of radius 4 so the
                linear classes are mutually separable by hyperplanes
      radial:   point = (rho_k + N(0, sigma)) * (cos phi, sin phi),
                phi ~ U[0, 2pi), rho_k = 1 + 1.2 * (radial index)
      xor-like: two blobs in opposite quadrants at distance a = 1.5 from the
                origin; consecutive xor classes use the complementary
                quadrant pair, so no hyperplane separates the pair
      noise is isotropic Gaussian with standard deviation sigma.
    """

    tiers: tuple             # one tier per class, length K
    per_class: int = 100
    sigma: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if len(self.tiers) < 2:
            raise ValueError("need at least two classes")
        bad = [t for t in self.tiers if t not in TIERS]
        if bad:
            raise ValueError(f"unknown tiers {bad}; valid: {TIERS}")
        if self.sigma < 0:
            raise ValueError("noise sigma must be nonnegative")


def generate_synthetic(spec, split="train"):
    """Deterministic tiered 2-D dataset; returns a LabeledDataset of (N, 2)
    points with labels 1..K."""
    rng = RngState(spec.seed).generator()
    k = len(spec.tiers)
    n_lin = sum(t == "linear" for t in spec.tiers)
    xs, ys = [], []
    lin_i = rad_i = xor_i = 0
    for ci, tier in enumerate(spec.tiers):
        n = spec.per_class
        if tier == "linear":
            theta = 2.0 * np.pi * lin_i / max(n_lin, 1)
            center = 4.0 * np.array([np.cos(theta), np.sin(theta)])
            pts = center + rng.normal(0.0, spec.sigma, size=(n, 2))
            lin_i += 1
        elif tier == "radial":
            rho = 1.0 + 1.2 * rad_i + rng.normal(0.0, spec.sigma, size=n)
            phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
            pts = np.stack([rho * np.cos(phi), rho * np.sin(phi)], axis=1)
            rad_i += 1
        else:  # xor-like
            a = 1.5
            sign = 1.0 if xor_i % 2 == 0 else -1.0
            blobs = np.array([[a, a * sign], [-a, -a * sign]])
            which = rng.integers(2, size=n)
            pts = blobs[which] + rng.normal(0.0, spec.sigma, size=(n, 2))
            xor_i += 1
        xs.append(pts)
        ys.append(np.full(n, ci + 1, dtype=np.intp))
    samples = np.concatenate(xs)
    labels = np.concatenate(ys)
    order = rng.permutation(len(labels))
    return LabeledDataset(samples[order], labels[order], k, split)


def shuffle_dataset(dataset, rng):
    """Return a copy of the dataset in a permuted order."""
    order = rng.permutation(len(dataset))
    return LabeledDataset(
        dataset.samples[order], dataset.labels[order], dataset.num_classes, dataset.split
    )
