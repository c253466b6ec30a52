"""Datasets: MNIST IDX files, a procedural dSprites-style renderer, and batching."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
UBYTE_TYPE = 0x08
CANVAS = 64
SHAPE_KINDS = ("square", "ellipse", "heart")
# Circumradius (pixels) of a scale-1 shape; keeps every shape at the allowed
# positions inside the canvas including the anti-aliasing fringe.
BASE_RADIUS = 5.8


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


@dataclass
class Dataset:
    images: np.ndarray  # (count, height * width), values in [0, 1]
    image_height: int
    image_width: int
    name: str = ""

    def __post_init__(self):
        if self.images.ndim != 2 or self.images.shape[0] == 0:
            raise ValueError("dataset needs a non-empty (count, pixels) array")
        if self.images.shape[1] != self.image_height * self.image_width:
            raise ValueError("pixel count does not match image size")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def input_dim(self) -> int:
        return self.images.shape[1]

    def subset(self, count: int) -> "Dataset":
        return Dataset(self.images[:count], self.image_height, self.image_width, self.name)


# -- IDX ----------------------------------------------------------------------


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def parse_idx(raw: bytes, expected_magic: int | None = None) -> np.ndarray:
    """Decode an unsigned-byte IDX buffer into an ndarray of uint8."""
    if len(raw) < 4:
        raise IdxFormatError(f"file too short for magic number: {len(raw)} bytes", len(raw))
    zero, dtype_code, ndim = struct.unpack_from(">HBB", raw, 0)
    magic = (dtype_code << 8) | ndim
    if zero != 0 or dtype_code != UBYTE_TYPE or ndim == 0:
        raise IdxFormatError(f"bad magic bytes {raw[:4].hex()}", 0)
    if expected_magic is not None and magic != expected_magic:
        raise IdxFormatError(f"magic {magic} does not match expected {expected_magic}", 0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"truncated header: need {header} bytes, have {len(raw)}", len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    expected = 1
    for i, d in enumerate(dims):
        expected *= d
        if expected > len(raw):
            raise IdxFormatError(f"dimension {i} = {d} overflows the {len(raw)}-byte file", 4 + 4 * i)
    actual = len(raw) - header
    if actual != expected:
        raise IdxFormatError(f"payload length mismatch: expected {expected} bytes, got {actual}", header + min(actual, expected))
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(path, name: str | None = None) -> Dataset:
    """Load an IDX image file (magic 2051) with pixels scaled into [0, 1]."""
    arr = parse_idx(_read_bytes(path), IMAGE_MAGIC)
    count, height, width = arr.shape
    if count == 0:
        raise IdxFormatError("image file holds no samples", 4)
    images = arr.reshape(count, height * width).astype(np.float32) / 255.0
    return Dataset(images, height, width, name or Path(path).name)


def load_idx_labels(path) -> np.ndarray:
    return parse_idx(_read_bytes(path), LABEL_MAGIC)


def write_idx(path, ds: Dataset) -> None:
    pixels = np.rint(np.clip(ds.images, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = struct.pack(">HBBIII", 0, UBYTE_TYPE, 3, len(ds), ds.image_height, ds.image_width)
    payload = header + pixels.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "wb") as f:
            f.write(payload)
    else:
        path.write_bytes(payload)


# -- synthetic shapes ---------------------------------------------------------


@dataclass
class ShapeSpec:
    kind: str
    scale: float
    rotation: float
    x_pos: float
    y_pos: float

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if not 0.3 <= self.scale <= 1.0:
            raise ValueError("scale must lie in [0.3, 1.0]")
        if not (0.1 <= self.x_pos <= 0.9 and 0.1 <= self.y_pos <= 0.9):
            raise ValueError("positions must lie in [0.1, 0.9]")


def _signed_distance(kind: str, px: np.ndarray, py: np.ndarray, r: float) -> np.ndarray:
    """Approximate signed distance in pixels (negative inside) in shape-local coordinates."""
    if kind == "square":
        half = r / np.sqrt(2.0)
        qx, qy = np.abs(px) - half, np.abs(py) - half
        outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
        return outside + np.minimum(np.maximum(qx, qy), 0)
    if kind == "ellipse":
        a, b = r, 0.55 * r
        k = np.hypot(px / a, py / b)
        return (k - 1.0) * b
    # Implicit heart (x^2 + y^2 - 1)^3 - x^2 y^3 = 0; its farthest point from the origin is at radius ~1.4245.
    s = r / 1.43
    x, y = px / s, -py / s
    q = x * x + y * y - 1.0
    f = q**3 - x * x * y**3
    gx = 6 * x * q * q - 2 * x * y**3
    gy = 6 * y * q * q - 3 * x * x * y * y
    return f / np.maximum(np.hypot(gx, gy), 1e-6) * s


def render_shape(spec: ShapeSpec, size: int = CANVAS) -> np.ndarray:
    """Anti-aliased white shape on a black ``size`` x ``size`` canvas."""
    centers = np.arange(size) + 0.5
    gx, gy = np.meshgrid(centers, centers)
    dx, dy = gx - spec.x_pos * size, gy - spec.y_pos * size
    c, s = np.cos(spec.rotation), np.sin(spec.rotation)
    lx, ly = c * dx + s * dy, -s * dx + c * dy
    sd = _signed_distance(spec.kind, lx, ly, BASE_RADIUS * spec.scale * size / CANVAS)
    return np.clip(0.5 - sd, 0.0, 1.0)


def random_shape_spec(rng: np.random.Generator) -> ShapeSpec:
    return ShapeSpec(
        kind=SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))],
        scale=float(rng.uniform(0.3, 1.0)),
        rotation=float(rng.uniform(0.0, 2 * np.pi)),
        x_pos=float(rng.uniform(0.1, 0.9)),
        y_pos=float(rng.uniform(0.1, 0.9)),
    )


def generate_shapes(count: int, rng: np.random.Generator) -> Dataset:
    if count <= 0:
        raise ValueError("count must be positive")
    images = np.empty((count, CANVAS * CANVAS), dtype=np.float32)
    for i in range(count):
        images[i] = render_shape(random_shape_spec(rng)).reshape(-1)
    return Dataset(images, CANVAS, CANVAS, "shapes")


# -- batching -----------------------------------------------------------------


def batch_indices(count: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of shuffled index batches; the final partial batch is dropped."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    order = rng.permutation(count)
    full = count // batch_size
    return [order[i * batch_size : (i + 1) * batch_size] for i in range(full)]


def batches(ds: Dataset, batch_size: int, rng: np.random.Generator, epochs: int | None = None) -> Iterator[np.ndarray]:
    """Yield image batches epoch after epoch (forever when ``epochs`` is None)."""
    if len(ds) < batch_size:
        raise ValueError(f"dataset of {len(ds)} samples cannot fill a batch of {batch_size}")
    epoch = 0
    while epochs is None or epoch < epochs:
        for idx in batch_indices(len(ds), batch_size, rng):
            yield ds.images[idx]
        epoch += 1
