"""Dataset layout, synthetic shapes generator, and HaS / CutMix augmentations.

Layout of a dataset root (one directory per split)::

    <root>/meta.json                      {"classes": [...], "image_size": S}
    <root>/<split>/images/<id>.png        RGB, 8 bit
    <root>/<split>/labels.csv             image_id,class
    <root>/<split>/boxes.csv              image_id,class,x0,y0,x1,y1   (inclusive pixels; eval splits)
    <root>/<split>/masks/<id>.png         8 bit, 0 = background, 255 = object (eval splits)

The ``train`` split only needs ``labels.csv``; annotations are never read for it.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw

from .core import Box, ClassMask, PixelAnnotation, seeded_rng

TRAIN_SPLIT = "train"
SHAPES = ("circle", "square", "triangle")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    image_path: Path
    label: ClassMask
    mask_path: Optional[Path] = None
    boxes: tuple = ()


@dataclass
class DatasetManifest:
    root: Path
    split: str
    entries: list
    num_classes: int

    def __len__(self):
        return len(self.entries)

    @property
    def has_boxes(self) -> bool:
        return bool(self.entries) and all(e.boxes for e in self.entries)

    @property
    def has_masks(self) -> bool:
        return bool(self.entries) and all(e.mask_path is not None for e in self.entries)


def _read_meta(root: Path) -> dict:
    path = root / "meta.json"
    return json.loads(path.read_text()) if path.exists() else {}


def load_manifest(root, split: str, num_classes: Optional[int] = None) -> DatasetManifest:
    """Validate and index one split. Entries are ordered by image path."""
    root = Path(root)
    split_dir = root / split
    labels_csv = split_dir / "labels.csv"
    if not labels_csv.exists():
        raise DatasetError(f"{labels_csv} not found")
    if num_classes is None:
        classes = _read_meta(root).get("classes")
        if not classes:
            raise DatasetError("number of classes unknown: pass num_classes or provide meta.json")
        num_classes = len(classes)

    labels = {}
    with labels_csv.open(newline="") as fh:
        for row in csv.DictReader(fh):
            k = int(row["class"])
            if not 0 <= k < num_classes:
                raise DatasetError(f"class {k} of {row['image_id']} outside [0, {num_classes})")
            labels[row["image_id"]] = k
    if not labels:
        raise DatasetError(f"split {split!r} under {root} is empty")

    boxes = {}
    mask_dir = None
    if split != TRAIN_SPLIT:
        boxes_csv = split_dir / "boxes.csv"
        if boxes_csv.exists():
            with boxes_csv.open(newline="") as fh:
                for row in csv.DictReader(fh):
                    box = Box(int(row["class"]), int(row["x0"]), int(row["y0"]), int(row["x1"]), int(row["y1"]))
                    boxes.setdefault(row["image_id"], []).append(box)
        if (split_dir / "masks").is_dir():
            mask_dir = split_dir / "masks"
        if not boxes and mask_dir is None:
            raise DatasetError(f"evaluation split {split!r} has neither boxes.csv nor masks/")

    entries = []
    for image_id, k in labels.items():
        image_path = split_dir / "images" / f"{image_id}.png"
        if not image_path.exists():
            raise DatasetError(f"missing image {image_path}")
        mask_path = None
        if mask_dir is not None:
            mask_path = mask_dir / f"{image_id}.png"
            if not mask_path.exists():
                raise DatasetError(f"missing mask for {image_id}")
        if split != TRAIN_SPLIT and boxes and image_id not in boxes:
            raise DatasetError(f"missing boxes for {image_id}")
        entries.append(ManifestEntry(image_id, image_path, ClassMask.one_hot(k, num_classes), mask_path,
                                     tuple(boxes.get(image_id, ()))))
    entries.sort(key=lambda e: str(e.image_path))
    return DatasetManifest(root, split, entries, num_classes)


def load_image(path, image_size: Optional[int] = None) -> np.ndarray:
    """RGB file -> float32 (3, H, W) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    if image_size is not None and arr.shape[:2] != (image_size, image_size):
        raise DatasetError(f"{path}: expected {image_size}x{image_size}, got {arr.shape[1]}x{arr.shape[0]}")
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_annotation(entry: ManifestEntry) -> PixelAnnotation:
    mask = None
    if entry.mask_path is not None:
        with Image.open(entry.mask_path) as im:
            mask = np.asarray(im.convert("L")) > 127
    return PixelAnnotation(entry.label.dominant_class, list(entry.boxes), mask)


def load_images(manifest: DatasetManifest, image_size: Optional[int] = None) -> np.ndarray:
    """All images of a split as uint8 (M, 3, H, W); labels only, never annotations."""
    out = []
    for e in manifest.entries:
        with Image.open(e.image_path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        if image_size is not None and arr.shape[:2] != (image_size, image_size):
            raise DatasetError(f"{e.image_path}: expected {image_size}x{image_size}")
        out.append(arr.transpose(2, 0, 1))
    return np.stack(out)


# --------------------------------------------------------------------------
# Synthetic shapes
# --------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    splits: dict = field(default_factory=lambda: {"train": 2000, "test": 300})
    classes: tuple = SHAPES
    image_size: int = 96
    noise: float = 0.2
    scale_range: tuple = (0.3, 0.6)
    max_rotation: float = 15.0  # degrees
    seed: int = 0


def _shape_polygon(kind: str, cx: float, cy: float, size: float, angle: float):
    if kind == "square":
        r = size / math.sqrt(2.0)
        n, offset = 4, math.pi / 4
    elif kind == "triangle":
        r = size / math.sqrt(3.0)
        n, offset = 3, -math.pi / 2
    else:
        raise DatasetError(f"unknown shape {kind!r}")
    return [(cx + r * math.cos(offset + angle + 2 * math.pi * i / n),
             cy + r * math.sin(offset + angle + 2 * math.pi * i / n)) for i in range(n)]


def render_shape(kind: str, image_size: int, cx: float, cy: float, size: float, angle: float) -> np.ndarray:
    canvas = Image.new("L", (image_size, image_size), 0)
    draw = ImageDraw.Draw(canvas)
    if kind == "circle":
        r = size / 2.0
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=255)
    else:
        draw.polygon(_shape_polygon(kind, cx, cy, size, angle), fill=255)
    return np.asarray(canvas) > 127


def _texture(rng, size: int, noise: float) -> np.ndarray:
    coarse = rng.normal(size=(3, 6, 6)).astype(np.float32)
    smooth = np.stack([
        np.asarray(Image.fromarray(c).resize((size, size), Image.BILINEAR)) for c in coarse
    ])
    fine = rng.normal(size=(3, size, size)).astype(np.float32)
    return noise * (0.5 * smooth + 0.5 * fine)


def synth_image(rng: np.random.Generator, kind: str, spec: SyntheticSpec):
    """One (image float32 (3,S,S) in [0,1], mask bool (S,S)) pair."""
    s = spec.image_size
    size = rng.uniform(*spec.scale_range) * s
    margin = size * 0.6
    cx = rng.uniform(margin, s - margin)
    cy = rng.uniform(margin, s - margin)
    angle = rng.uniform(-spec.max_rotation, spec.max_rotation) * math.pi / 180.0
    mask = render_shape(kind, s, cx, cy, size, angle)

    # object brighter than the background in every channel
    bg = rng.uniform(0.05, 0.45, size=3)
    fg = np.clip(bg + rng.uniform(0.3, 0.5, size=3), 0.0, 1.0)
    img = np.where(mask[None], fg[:, None, None], bg[:, None, None]).astype(np.float32)
    img += _texture(rng, s, spec.noise)
    return np.clip(img, 0.0, 1.0), mask


def mask_box(mask: np.ndarray, class_id: int) -> Box:
    ys, xs = np.nonzero(mask)
    return Box(class_id, int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def _write_png(path: Path, array: np.ndarray) -> None:
    # fixed compression settings keep files byte-identical across runs
    Image.fromarray(array).save(path, format="PNG", optimize=False, compress_level=6)


def generate_synthetic(spec: SyntheticSpec, out_dir) -> Path:
    """Materialize the dataset under ``out_dir``; identical specs give byte-identical files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.json").write_text(json.dumps(
        {"classes": list(spec.classes), "image_size": spec.image_size, "seed": spec.seed,
         "noise": spec.noise, "splits": spec.splits}, indent=2) + "\n")
    rng = seeded_rng(spec.seed)
    k = len(spec.classes)
    for split, count in spec.splits.items():
        split_dir = out / split
        (split_dir / "images").mkdir(parents=True, exist_ok=True)
        evaluation = split != TRAIN_SPLIT
        if evaluation:
            (split_dir / "masks").mkdir(exist_ok=True)
        label_rows, box_rows = [], []
        width = max(5, len(str(count)))
        for i in range(count):
            image_id = f"{split}_{i:0{width}d}"
            cls = int(rng.integers(k))
            img, mask = synth_image(rng, spec.classes[cls], spec)
            _write_png(split_dir / "images" / f"{image_id}.png",
                       (img.transpose(1, 2, 0) * 255.0 + 0.5).astype(np.uint8))
            label_rows.append((image_id, cls))
            if evaluation:
                _write_png(split_dir / "masks" / f"{image_id}.png", mask.astype(np.uint8) * 255)
                b = mask_box(mask, cls)
                box_rows.append((image_id, cls, b.x0, b.y0, b.x1, b.y1))
        with (split_dir / "labels.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image_id", "class"])
            w.writerows(label_rows)
        if evaluation:
            with (split_dir / "boxes.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["image_id", "class", "x0", "y0", "x1", "y1"])
                w.writerows(box_rows)
    return out


# --------------------------------------------------------------------------
# Augmentations (operate on float (3, H, W) arrays)
# --------------------------------------------------------------------------


def has_augment(image: np.ndarray, grid: int, hide_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Hide-and-Seek: split into grid x grid cells and zero each independently with ``hide_prob``."""
    h, w = image.shape[-2:]
    if h % grid or w % grid:
        raise ValueError(f"grid {grid} does not divide image size {h}x{w}")
    hidden = rng.random((grid, grid)) < hide_prob
    keep = np.repeat(np.repeat(~hidden, h // grid, axis=0), w // grid, axis=1)
    return image * keep.astype(image.dtype)


def cutmix_with_box(image_a, y_a, image_b, y_b, box):
    """Paste ``image_b[y0:y1, x0:x1]`` (half-open box) into ``image_a``; returns (image, label, lam)."""
    x0, y0, x1, y1 = box
    h, w = image_a.shape[-2:]
    out = image_a.copy()
    out[..., y0:y1, x0:x1] = image_b[..., y0:y1, x0:x1]
    lam = 1.0 - (x1 - x0) * (y1 - y0) / float(h * w)
    label = lam * np.asarray(y_a, dtype=np.float64) + (1.0 - lam) * np.asarray(y_b, dtype=np.float64)
    return out, label, lam


def cutmix_augment(image_a, y_a, image_b, y_b, alpha: float, rng: np.random.Generator):
    """CutMix with a Beta(alpha, alpha) area ratio; ``lam`` is recomputed from the clipped box."""
    if image_a.shape != image_b.shape:
        raise ValueError("cutmix images must share dimensions")
    h, w = image_a.shape[-2:]
    lam = rng.beta(alpha, alpha)
    cut = math.sqrt(1.0 - lam)
    cw, ch = int(w * cut), int(h * cut)
    cx, cy = int(rng.integers(w)), int(rng.integers(h))
    box = (max(cx - cw // 2, 0), max(cy - ch // 2, 0), min(cx + cw // 2, w), min(cy + ch // 2, h))
    return cutmix_with_box(image_a, y_a, image_b, y_b, box)
