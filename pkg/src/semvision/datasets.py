"""Datasets: IDX file IO, per-class subsampling, and synthetic corpora.

Two generators live here.  ``generate_faces`` builds the five-class facial
shape dataset (four shape components per face with jittered positions and
scales).  ``synthesize_digits`` renders handwritten-style digit images from
system font glyphs with random affine jitter; it stands in for external
digit corpora in fully offline environments and round-trips through the
same IDX reader/writer as any real corpus.
"""

from __future__ import annotations

import glob
import importlib.util
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import write_pgm

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049

SHAPE_NAMES = ("circle", "triangle", "square", "diamond", "cross")

# component order: left eye, right eye, nose, mouth
FACE_ANCHORS = ((0.32, 0.28), (0.32, 0.72), (0.56, 0.50), (0.80, 0.50))
FACE_NOMINAL_RADII = (0.10, 0.10, 0.11, 0.13)


class IdxFormatError(ValueError):
    """Raised when an IDX file violates the format contract."""


@dataclass
class LabeledDataset:
    """Images ``(N, H, W)`` in [0, 1] with integer labels in ``[0, class_count)``."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3:
            raise ValueError(f"images must be (N, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels must have equal length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")
        if len(self.images) and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.images)

    def take(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx], self.class_count)


# ---------------------------------------------------------------------------
# IDX reader / writer
# ---------------------------------------------------------------------------

def _read_idx_images(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise IdxFormatError(f"{path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(f"{path}: wrong magic {magic}, expected {IMAGES_MAGIC}")
    need = count * rows * cols
    payload = raw[16:]
    if len(payload) < need:
        raise IdxFormatError(f"{path}: truncated payload, {len(payload)} bytes for {need}")
    pixels = np.frombuffer(payload, dtype=np.uint8, count=need)
    return pixels.reshape(count, rows, cols).astype(np.float64) / 255.0


def _read_idx_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: truncated header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise IdxFormatError(f"{path}: wrong magic {magic}, expected {LABELS_MAGIC}")
    payload = raw[8:]
    if len(payload) < count:
        raise IdxFormatError(f"{path}: truncated payload, {len(payload)} bytes for {count}")
    return np.frombuffer(payload, dtype=np.uint8, count=count).astype(np.int64)


def load_mnist(images_path, labels_path, class_count: int = 10) -> LabeledDataset:
    """Load an MNIST-format IDX image/label file pair.

    Bytes are rescaled to [0, 1] by division by 255.  Wrong magic numbers,
    truncated payloads and count mismatches are each reported distinctly.
    """
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxFormatError(
            f"count mismatch: {len(images)} images vs {len(labels)} labels")
    return LabeledDataset(images, labels, class_count)


def save_idx_dataset(ds: LabeledDataset, images_path, labels_path) -> None:
    """Write a dataset as an IDX image/label file pair (uint8, big-endian)."""
    n, rows, cols = ds.images.shape
    data = np.rint(ds.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        f.write(data.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, n))
        f.write(ds.labels.astype(np.uint8).tobytes())


def save_manifest(path, *, seed: int, labels, files=None, extra: dict | None = None) -> None:
    """Write a JSON manifest describing a generated dataset."""
    doc = {"seed": int(seed), "labels": [int(l) for l in labels]}
    if files is not None:
        doc["files"] = [str(f) for f in files]
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def export_dataset_pgm(ds: LabeledDataset, out_dir, seed: int = 0) -> list[str]:
    """Dump every image as a PGM file plus a JSON manifest; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(len(ds)):
        p = out / f"img_{i:05d}_c{ds.labels[i]}.pgm"
        write_pgm(p, ds.images[i])
        paths.append(str(p))
    save_manifest(out / "manifest.json", seed=seed, labels=ds.labels, files=paths)
    return paths


# ---------------------------------------------------------------------------
# Per-class subsampling
# ---------------------------------------------------------------------------

def sample_per_class(ds: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """Draw exactly ``n`` items per class without replacement, seeded."""
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(ds.class_count):
        members = np.flatnonzero(ds.labels == c)
        if len(members) < n:
            raise ValueError(f"class {c} has {len(members)} members, need {n}")
        picked = rng.choice(members, size=n, replace=False)
        chosen.append(np.sort(picked))
    return ds.take(np.concatenate(chosen))


# ---------------------------------------------------------------------------
# Facial shape dataset
# ---------------------------------------------------------------------------

def default_class_shapes(n_classes: int = 5) -> tuple[tuple[str, ...], ...]:
    """Each class pairs two shapes (eyes/nose alternate with mouth), so every
    class carries a unique shape pair and no two classes share a 4-tuple."""
    k = len(SHAPE_NAMES)
    out = []
    for i in range(n_classes):
        a, b = SHAPE_NAMES[(2 * i) % k], SHAPE_NAMES[(2 * i + 1) % k]
        out.append((a, b, a, b))
    return tuple(out)


@dataclass(frozen=True)
class FaceSpec:
    """Geometry of the synthetic face corpus.

    ``position_jitter`` is in pixels; ``scale_range`` multiplies each
    component's nominal radius.
    """

    canvas: int = 64
    class_shapes: tuple[tuple[str, ...], ...] = field(default_factory=default_class_shapes)
    position_jitter: float = 0.12 * 64
    scale_range: tuple[float, float] = (0.75, 1.25)

    def __post_init__(self):
        if self.canvas < 16:
            raise ValueError("canvas too small")
        if not (0.0 < self.scale_range[0] <= self.scale_range[1]):
            raise ValueError("scale_range must be positive and ordered")
        if self.position_jitter < 0:
            raise ValueError("jitter must be non-negative")
        for shapes in self.class_shapes:
            if len(shapes) != 4:
                raise ValueError("each class needs shapes for 4 components")
            for s in shapes:
                if s not in SHAPE_NAMES:
                    raise ValueError(f"unknown shape {s!r}")


def _solid_mask(shape: str, dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    if r <= 0:
        return np.zeros(dy.shape, dtype=bool)
    if shape == "circle":
        return dy * dy + dx * dx <= r * r
    if shape == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if shape == "diamond":
        return np.abs(dy) + np.abs(dx) <= r
    if shape == "triangle":
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2.0)
    if shape == "cross":
        bar = 0.35 * r
        return ((np.abs(dx) <= bar) & (np.abs(dy) <= r)) | ((np.abs(dy) <= bar) & (np.abs(dx) <= r))
    raise ValueError(f"unknown shape {shape!r}")


def _shape_mask(shape: str, dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    """Outline rendering: the solid mask minus a shrunken interior, so
    components are stroke drawings rather than filled blobs."""
    return _solid_mask(shape, dy, dx, r) & ~_solid_mask(shape, dy, dx, r - 2.0)


def _boxes_ok(boxes: list[tuple[float, float, float, float]], canvas: int) -> bool:
    # 1px margin to the border and between any two component boxes
    for (t, b, l, r) in boxes:
        if t < 1 or l < 1 or b > canvas - 1 or r > canvas - 1:
            return False
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            t1, b1, l1, r1 = boxes[i]
            t2, b2, l2, r2 = boxes[j]
            if not (b1 + 1 <= t2 or b2 + 1 <= t1 or r1 + 1 <= l2 or r2 + 1 <= l1):
                return False
    return True


def _place_components(spec: FaceSpec, rng: np.random.Generator, max_tries: int = 100):
    """Sample non-overlapping (row, col, radius) placements for the 4 components."""
    c = spec.canvas
    for _ in range(max_tries):
        placements, boxes = [], []
        for (fr, fc), nominal in zip(FACE_ANCHORS, FACE_NOMINAL_RADII):
            scale = rng.uniform(*spec.scale_range)
            r = nominal * c * scale
            row = fr * c + rng.uniform(-spec.position_jitter, spec.position_jitter)
            col = fc * c + rng.uniform(-spec.position_jitter, spec.position_jitter)
            placements.append((row, col, r))
            boxes.append((row - r, row + r, col - r, col + r))
        if _boxes_ok(boxes, c):
            return placements
    raise ValueError(f"could not place components in {max_tries} tries; "
                     "jitter/scale ranges leave no room")


def render_face(spec: FaceSpec, shapes, placements) -> np.ndarray:
    img = np.zeros((spec.canvas, spec.canvas))
    yy, xx = np.mgrid[0:spec.canvas, 0:spec.canvas].astype(np.float64)
    for shape, (row, col, r) in zip(shapes, placements):
        img[_shape_mask(shape, yy - row, xx - col, r)] = 1.0
    return img


def generate_faces(spec: FaceSpec, per_class: int, seed: int) -> LabeledDataset:
    """Synthesize ``len(class_shapes) * per_class`` faces, seeded and reproducible.

    Every face carries exactly the four class-defining shape components at
    jittered positions and scales; bounding boxes never overlap and never
    touch the canvas border.
    """
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for cls, shapes in enumerate(spec.class_shapes):
        for _ in range(per_class):
            placements = _place_components(spec, rng)
            images.append(render_face(spec, shapes, placements))
            labels.append(cls)
    return LabeledDataset(np.stack(images), np.array(labels), len(spec.class_shapes))


# ---------------------------------------------------------------------------
# Glyph-rendered digit dataset
# ---------------------------------------------------------------------------

# upright faces only; oblique/italic glyphs alias digit classes too heavily
_FONT_GLOBS = ("DejaVuSans.ttf", "DejaVuSans-Bold.ttf", "DejaVuSerif.ttf",
               "DejaVuSerif-Bold.ttf", "DejaVuSansMono.ttf", "DejaVuSansMono-Bold.ttf")


def _font_files() -> list[str]:
    dirs = []
    mpl = importlib.util.find_spec("matplotlib")
    if mpl is not None and mpl.submodule_search_locations:
        for loc in mpl.submodule_search_locations:
            dirs.append(os.path.join(loc, "mpl-data", "fonts", "ttf"))
    dirs += ["/usr/share/fonts/truetype/dejavu", "/usr/share/fonts"]
    files = []
    for d in dirs:
        for pattern in _FONT_GLOBS:
            files.extend(sorted(glob.glob(os.path.join(d, pattern))))
    return files


def synthesize_digits(per_class: int, seed: int, size: int = 28,
                      class_count: int = 10) -> LabeledDataset:
    """Render a digit corpus from font glyphs with random jitter.

    Each sample draws a random font face, size, rotation, offset, blur and
    ink intensity, giving MNIST-like intra-class variation.  Deterministic
    for a fixed seed.
    """
    from PIL import Image, ImageDraw, ImageFilter, ImageFont

    fonts = _font_files()
    rng = np.random.default_rng(seed)
    images, labels = [], []
    cache: dict[tuple[str, int], "ImageFont.FreeTypeFont"] = {}

    def get_font(path: str, pt: int):
        key = (path, pt)
        if key not in cache:
            cache[key] = (ImageFont.truetype(path, pt) if path
                          else ImageFont.load_default(size=pt))
        return cache[key]

    for digit in range(class_count):
        for _ in range(per_class):
            font_path = fonts[rng.integers(len(fonts))] if fonts else ""
            pt = int(rng.integers(int(size * 0.60), int(size * 0.85)))
            font = get_font(font_path, pt)
            canvas = Image.new("L", (size * 2, size * 2), 0)
            draw = ImageDraw.Draw(canvas)
            text = str(digit)
            left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
            cx = size - (right - left) / 2 - left
            cy = size - (bottom - top) / 2 - top
            draw.text((cx, cy), text, fill=255, font=font)
            angle = rng.uniform(-8.0, 8.0)
            canvas = canvas.rotate(angle, resample=Image.BILINEAR, center=(size, size))
            blur = rng.uniform(0.0, 0.7)
            if blur > 0.05:
                canvas = canvas.filter(ImageFilter.GaussianBlur(blur))
            dy = int(rng.integers(-2, 3))
            dx = int(rng.integers(-2, 3))
            half = size // 2
            crop = canvas.crop((half + dx, half + dy, half + dx + size, half + dy + size))
            arr = np.asarray(crop, dtype=np.float64) / 255.0
            arr *= rng.uniform(0.75, 1.0)
            images.append(np.clip(arr, 0.0, 1.0))
            labels.append(digit)
    return LabeledDataset(np.stack(images), np.array(labels), class_count)
