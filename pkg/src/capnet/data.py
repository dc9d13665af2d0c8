"""Datasets, augmentation, and the synthetic fine-grained benchmark.

Images are float64 (H, W, 3) arrays in [0, 1]. On disk a dataset is
`root/<split>/<class_name>/*.png` with 8-bit RGB files; class order is the
sorted directory listing, file order the sorted file listing, so a tree
always loads into the same item order.

The synthetic benchmark mimics fine-grained recognition: every sample
shares one global silhouette and a random body texture, and class identity
lives only in a small patch at a jittered position. The per-class patches
are dihedral transforms of one base pattern, so their per-channel means
and variances are identical across classes; telling classes apart requires
resolving the patch's spatial layout, not global color statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .bilinear import _resample
from .errors import ConfigError, ContractViolation
from .regions import Region
from .tensor import Tensor


@dataclass(frozen=True)
class AugmentConfig:
    rotation_deg: float = 15.0
    scale_jitter: float = 0.1
    crop_from: int = 72     # expected input side
    crop_to: int = 64       # output side

    def __post_init__(self):
        if self.rotation_deg < 0 or self.scale_jitter < 0:
            raise ConfigError("augmentation magnitudes must be non-negative")
        if not 1 <= self.crop_to <= self.crop_from:
            raise ConfigError(
                f"crop {self.crop_from} -> {self.crop_to} must not enlarge")


def resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of an (H, W, C) array, either direction."""
    h, w = image.shape[:2]
    return _resample(Tensor(image), Region(0, 0, w, h), out_w, out_h).data


def rotate_image(image: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center, bilinear sampling, edges clamped."""
    h, w = image.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = np.deg2rad(degrees)
    cos, sin = np.cos(t), np.sin(t)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy, dx = ys - cy, xs - cx
    # Inverse map: sample the source at the backward-rotated position.
    sx = np.clip(cx + cos * dx + sin * dy, 0, w - 1)
    sy = np.clip(cy - sin * dx + cos * dy, 0, h - 1)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    d = image
    return ((1 - fy) * ((1 - fx) * d[y0, x0] + fx * d[y0, x1]) +
            fy * ((1 - fx) * d[y1, x0] + fx * d[y1, x1]))


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    if h < size or w < size:
        raise ContractViolation(f"cannot crop {size} from {h}x{w}")
    oy, ox = (h - size) // 2, (w - size) // 2
    return image[oy:oy + size, ox:ox + size].copy()


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random rotation, then scaling, then crop to the training size.

    The rng fully determines the draw, so calling twice with equally seeded
    generators gives identical views. With all magnitudes zero and equal
    crop sizes the output equals the input bit for bit.
    """
    h, w = image.shape[:2]
    if (h, w) != (cfg.crop_from, cfg.crop_from):
        raise ContractViolation(
            f"augment: image is {h}x{w}, config expects {cfg.crop_from} square")
    img = image
    if cfg.rotation_deg > 0:
        img = rotate_image(img, rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    if cfg.scale_jitter > 0:
        s = rng.uniform(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter)
        img = resize_image(img, int(round(img.shape[0] * s)), int(round(img.shape[1] * s)))
    size = cfg.crop_to
    if img.shape[0] < size or img.shape[1] < size:
        raise ContractViolation(
            f"augment: crop {size} exceeds post-scale size {img.shape[:2]}")
    oy = int(rng.integers(0, img.shape[0] - size + 1))
    ox = int(rng.integers(0, img.shape[1] - size + 1))
    return img[oy:oy + size, ox:ox + size].copy()


# --------------------------------------------------------------------------
# Dataset container and PNG trees

@dataclass
class LabeledDataset:
    class_names: list
    items: list          # (ndarray or path, label) pairs
    split: str = "train"

    def __len__(self) -> int:
        return len(self.items)

    def label(self, idx: int) -> int:
        return self.items[idx][1]

    def image(self, idx: int) -> np.ndarray:
        source = self.items[idx][0]
        if isinstance(source, np.ndarray):
            return source
        return load_png(source)

    @classmethod
    def from_directory(cls, root, split: str) -> "LabeledDataset":
        base = Path(root) / split
        if not base.is_dir():
            raise ConfigError(f"dataset split directory {base} does not exist")
        class_dirs = sorted(p for p in base.iterdir() if p.is_dir())
        if not class_dirs:
            raise ConfigError(f"dataset root {base} has no class subdirectories")
        items = []
        for label, cdir in enumerate(class_dirs):
            for f in sorted(cdir.glob("*.png")):
                items.append((f, label))
        if not items:
            raise ConfigError(f"dataset root {base} holds no png files")
        return cls([p.name for p in class_dirs], items, split)

    def write_png_tree(self, root) -> None:
        base = Path(root) / self.split
        for source, label in self.items:
            cdir = base / self.class_names[label]
            cdir.mkdir(parents=True, exist_ok=True)
        counters = [0] * len(self.class_names)
        for source, label in self.items:
            img = source if isinstance(source, np.ndarray) else load_png(source)
            name = f"img_{counters[label]:05d}.png"
            counters[label] += 1
            save_png(base / self.class_names[label] / name, img)


def save_png(path, image01: np.ndarray) -> None:
    arr = np.clip(image01 * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


# --------------------------------------------------------------------------
# Synthetic benchmark

def _patch_side(image_size: int, subtlety: float) -> int:
    return max(3, int(round(image_size * (0.08 + 0.30 * subtlety))))


def _class_patterns(num_classes: int, image_size: int, subtlety: float,
                    seed: int) -> list:
    p = _patch_side(image_size, subtlety)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 101])))
    xx, yy = np.meshgrid(np.arange(p), np.arange(p), indexing="xy")
    dots = (rng.random((p, p)) < 0.25).astype(np.float64)
    base = np.stack([xx / (p - 1), yy / (p - 1), dots], axis=-1)
    patterns = []
    for c in range(num_classes):
        if c < 8:
            pat = np.rot90(base, k=c % 4, axes=(0, 1))
            if c >= 4:
                pat = pat[:, ::-1]
        else:
            pat = rng.random((p, p, 3))
        patterns.append(np.ascontiguousarray(pat))
    return patterns


def _render_sample(rng: np.random.Generator, pattern: np.ndarray,
                   image_size: int, subtlety: float) -> np.ndarray:
    s = image_size
    body = resize_image(rng.uniform(0.35, 0.65, (6, 6, 3)), s, s)
    ys, xs = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    cy = cx = (s - 1) / 2.0
    inside = ((xs - cx) / (0.40 * s)) ** 2 + ((ys - cy) / (0.32 * s)) ** 2 <= 1.0
    img = body * np.where(inside[..., None], 1.0, 0.55)
    p = pattern.shape[0]
    lo, hi = int(round(0.3 * s)), int(round(0.7 * s))
    pcy = int(rng.integers(lo, hi + 1))
    pcx = int(rng.integers(lo, hi + 1))
    y0, x0 = pcy - p // 2, pcx - p // 2
    alpha = 0.35 + 0.65 * subtlety
    img[y0:y0 + p, x0:x0 + p] = ((1 - alpha) * img[y0:y0 + p, x0:x0 + p]
                                 + alpha * pattern)
    return np.clip(img, 0.0, 1.0)


def make_synthetic_dataset(num_classes: int, per_class: int, image_size: int,
                           subtlety: float, seed: int,
                           split: str = "train") -> LabeledDataset:
    """Deterministic synthetic split; the same arguments rebuild it exactly."""
    if num_classes < 2:
        raise ContractViolation(f"need at least 2 classes, got {num_classes}")
    if per_class < 1:
        raise ContractViolation("per_class must be positive; empty splits are refused")
    if not 0.0 < subtlety <= 1.0:
        raise ContractViolation(f"subtlety must lie in (0, 1], got {subtlety}")
    if split not in ("train", "test"):
        raise ContractViolation(f"split must be train or test, got {split!r}")
    if image_size < 16:
        raise ContractViolation(f"image_size {image_size} is too small to place a patch")
    split_tag = 0 if split == "train" else 1
    patterns = _class_patterns(num_classes, image_size, subtlety, seed)
    items = []
    for c in range(num_classes):
        for idx in range(per_class):
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence([seed, 3, split_tag, c, idx])))
            items.append((_render_sample(rng, patterns[c], image_size, subtlety), c))
    names = [f"class_{c}" for c in range(num_classes)]
    return LabeledDataset(names, items, split)
