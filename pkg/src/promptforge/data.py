"""Synthetic dataset generation and directory-format loading.

A dataset is a list of HxWx3 uint8 images with integer labels and ordered
class names.  The synthetic generator draws one colored shape per class
(16 shipped patterns) with positional jitter on a noisy background, which
keeps the classes separable even in raw pixel space.  On disk a dataset is
``root/<class name>/<image>.ppm`` with binary P6 pixmaps.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import keyed_generator

__all__ = [
    "IMAGE_SIZE",
    "PATTERNS",
    "Dataset",
    "generate_synthetic",
    "save_dataset",
    "load_directory",
    "write_ppm",
    "read_ppm",
]

IMAGE_SIZE = 32

# (class name, shape kind, base RGB); first words are all distinct so the
# hashed token ids stay distinct too.
PATTERNS: tuple[tuple[str, str, tuple[int, int, int]], ...] = (
    ("red block", "block", (220, 40, 40)),
    ("orange disc", "disc", (240, 140, 30)),
    ("yellow cross", "cross", (235, 220, 50)),
    ("green block", "block", (50, 190, 60)),
    ("teal disc", "disc", (30, 170, 160)),
    ("cyan cross", "cross", (70, 220, 235)),
    ("blue block", "block", (40, 80, 225)),
    ("navy disc", "disc", (25, 35, 120)),
    ("purple cross", "cross", (140, 60, 200)),
    ("magenta block", "block", (225, 50, 190)),
    ("pink disc", "disc", (245, 150, 195)),
    ("brown cross", "cross", (140, 85, 40)),
    ("olive block", "block", (120, 130, 40)),
    ("maroon disc", "disc", (130, 30, 55)),
    ("silver cross", "cross", (200, 200, 205)),
    ("white block", "block", (245, 245, 245)),
)


@dataclass
class Dataset:
    images: list[np.ndarray]
    labels: list[int]
    class_names: list[str]

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels must have equal length")
        for i, (img, label) in enumerate(zip(self.images, self.labels)):
            if not (0 <= label < len(self.class_names)):
                raise ValueError(f"sample {i}: label {label} outside {len(self.class_names)} classes")
            if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
                raise ValueError(f"sample {i}: expected HxWx3 uint8, got {img.shape} {img.dtype}")
            if img.shape != self.images[0].shape:
                raise ValueError(
                    f"sample {i}: dimensions {img.shape} differ from {self.images[0].shape}"
                )

    def __len__(self) -> int:
        return len(self.images)

    def class_indices(self, class_id: int) -> list[int]:
        return [i for i, label in enumerate(self.labels) if label == class_id]

    def subset(self, indices) -> "Dataset":
        return Dataset(
            images=[self.images[i] for i in indices],
            labels=[self.labels[i] for i in indices],
            class_names=list(self.class_names),
        )


def _shape_mask(kind: str, cy: int, cx: int) -> np.ndarray:
    ys, xs = np.ogrid[:IMAGE_SIZE, :IMAGE_SIZE]
    dy, dx = np.abs(ys - cy), np.abs(xs - cx)
    if kind == "block":
        return (dy <= 10) & (dx <= 10)
    if kind == "disc":
        return (ys - cy) ** 2 + (xs - cx) ** 2 <= 132
    if kind == "cross":
        return ((dy <= 4) & (dx <= 12)) | ((dx <= 4) & (dy <= 12))
    raise ValueError(f"unknown shape kind {kind!r}")


def generate_synthetic(classes: int, per_class: int, seed: int) -> Dataset:
    """Deterministically render ``classes`` x ``per_class`` 32x32 images.

    Each class is one shipped (shape, color) pattern, position-jittered on
    a dark noise background.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if classes > len(PATTERNS):
        raise ValueError(f"at most {len(PATTERNS)} classes are available, got {classes}")
    if per_class < 0:
        raise ValueError(f"per_class must be non-negative, got {per_class}")
    rng = keyed_generator(seed, "synthetic-data")
    images: list[np.ndarray] = []
    labels: list[int] = []
    for c in range(classes):
        _, kind, color = PATTERNS[c]
        base = np.array(color, dtype=np.int64)
        for _ in range(per_class):
            canvas = rng.integers(0, 30, size=(IMAGE_SIZE, IMAGE_SIZE, 3))
            cy = IMAGE_SIZE // 2 + int(rng.integers(-4, 5))
            cx = IMAGE_SIZE // 2 + int(rng.integers(-4, 5))
            mask = _shape_mask(kind, cy, cx)
            shade = np.clip(base + rng.integers(-15, 16, size=(IMAGE_SIZE, IMAGE_SIZE, 3)), 0, 255)
            canvas = np.where(mask[..., None], shade, canvas)
            images.append(canvas.astype(np.uint8))
            labels.append(c)
    return Dataset(images=images, labels=labels,
                   class_names=[PATTERNS[c][0] for c in range(classes)])


# ----------------------------------------------------------------------
# P6 pixmap I/O and the directory format
# ----------------------------------------------------------------------

def write_ppm(path, image: np.ndarray) -> None:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"write_ppm needs an HxWx3 uint8 array, got {arr.shape} {arr.dtype}")
    h, w, _ = arr.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(buf):
        ch = buf[pos:pos + 1]
        if ch in (b" ", b"\t", b"\r", b"\n"):
            pos += 1
        elif ch == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\r", b"\n"):
                pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos:pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
        pos += 1
    return buf[start:pos], pos


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic, pos = _next_token(buf, 0)
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary P6 pixmap")
    try:
        width, pos = _next_token(buf, pos)
        height, pos = _next_token(buf, pos)
        maxval, pos = _next_token(buf, pos)
        w, h, mx = int(width), int(height), int(maxval)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed pixmap header") from exc
    if mx != 255:
        raise ValueError(f"{path}: unsupported max value {mx}")
    pos += 1  # single whitespace byte after the header
    raster = buf[pos:pos + w * h * 3]
    if len(raster) != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def save_dataset(ds: Dataset, root) -> Path:
    """Write ``root/<class name>/<index>.ppm`` for every sample."""
    root = Path(root)
    counters = [0] * len(ds.class_names)
    for name in ds.class_names:
        (root / name).mkdir(parents=True, exist_ok=True)
    for image, label in zip(ds.images, ds.labels):
        write_ppm(root / ds.class_names[label] / f"{counters[label]:04d}.ppm", image)
        counters[label] += 1
    return root


def load_directory(path) -> Dataset:
    """Load a ``root/<class name>/<image>.ppm`` tree.

    Class names are the sorted subdirectory names; images load in sorted
    path order.  An empty root yields an empty dataset.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    class_dirs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name)
    images: list[np.ndarray] = []
    labels: list[int] = []
    expected_shape = None
    for class_id, class_dir in enumerate(class_dirs):
        for file in sorted(class_dir.glob("*.ppm")):
            img = read_ppm(file)
            if expected_shape is None:
                expected_shape = img.shape
            elif img.shape != expected_shape:
                raise ValueError(f"{file}: dimensions {img.shape} differ from {expected_shape}")
            images.append(img)
            labels.append(class_id)
    return Dataset(images=images, labels=labels, class_names=[p.name for p in class_dirs])
