"""Synthetic 2-D densities, small shape images, and dataset files.

Binary layout (little-endian)::

    b"FVDS" | version u16 | n u32 | dim u32 | n*dim float64, row-major

CSV is one point per row, comma-separated, no header.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import Rng

MAGIC = b"FVDS"
VERSION = 1
_HEADER = struct.Struct("<4sHII")


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    points: np.ndarray
    name: str = "custom"
    seed: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1 or self.points.shape[1] < 1:
            raise ValueError(f"dataset points must be a non-empty (n, dim) array, got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("dataset contains non-finite values")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def split(self, seed: int, holdout: float = 0.1) -> tuple[Dataset, Dataset]:
        """Deterministic train/validation split by hashing (seed, index)."""
        keys = np.array([
            int.from_bytes(hashlib.blake2b(struct.pack("<QQ", seed & (2**64 - 1), i),
                                           digest_size=8).digest(), "little")
            for i in range(len(self))
        ], dtype=np.uint64)
        val = (keys % np.uint64(1000)) < np.uint64(round(holdout * 1000))
        meta = dict(self.params, split_seed=seed)
        return (Dataset(self.points[~val], self.name, self.seed, meta),
                Dataset(self.points[val], self.name, self.seed, meta))


def gen_two_moons(n: int, noise_sd: float = 0.1, seed: int = 0) -> Dataset:
    """Even rows on the upper arc around (0, 0), odd rows on the lower arc around (1, 0.5)."""
    if n < 1 or noise_sd < 0:
        raise ValueError("gen_two_moons: need n >= 1 and noise_sd >= 0")
    rng = Rng(seed)
    t = rng.uniform(n) * np.pi
    upper = np.arange(n) % 2 == 0
    pts = np.empty((n, 2))
    pts[upper, 0] = np.cos(t[upper])
    pts[upper, 1] = np.sin(t[upper])
    pts[~upper, 0] = 1.0 - np.cos(t[~upper])
    pts[~upper, 1] = 0.5 - np.sin(t[~upper])
    if noise_sd > 0:
        pts += noise_sd * rng.normal((n, 2))
    return Dataset(pts, "two_moons", seed, {"n": n, "noise_sd": noise_sd})


def gen_gaussian_ring(n: int, k: int = 8, radius: float = 2.0, sd: float = 0.1,
                      seed: int = 0) -> Dataset:
    """Mixture of ``k`` isotropic Gaussians at angles 2 pi j / k on a circle."""
    if n < 1 or k < 1 or sd < 0:
        raise ValueError("gen_gaussian_ring: need n >= 1, k >= 1, sd >= 0")
    rng = Rng(seed)
    mode = rng.integers(k, n)
    angle = 2.0 * np.pi * mode / k
    centers = radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    pts = centers + sd * rng.normal((n, 2))
    return Dataset(pts, "gaussian_ring", seed, {"n": n, "k": k, "radius": radius, "sd": sd})


def gen_shapes(n: int, side: int = 8, seed: int = 0) -> Dataset:
    """Flattened grayscale images, background -1, one filled rectangle or disc.

    Each shape covers at least 2x2 pixels (>= 4 lit); intensity in [0.2, 1].
    """
    if side not in (8, 16):
        raise ValueError(f"gen_shapes: side must be 8 or 16, got {side}")
    if n < 1:
        raise ValueError("gen_shapes: n must be >= 1")
    rng = Rng(seed)
    rows, cols = np.mgrid[0:side, 0:side]
    imgs = np.full((n, side, side), -1.0)
    draws = rng.uniform((n, 6))
    for i in range(n):
        kind, a, b, c, d, level = draws[i]
        value = 0.2 + 0.8 * level
        if kind < 0.5:
            h = 2 + int(a * (side // 2 + 1))
            w = 2 + int(b * (side // 2 + 1))
            r0 = int(c * (side - h + 1))
            c0 = int(d * (side - w + 1))
            imgs[i, r0:r0 + h, c0:c0 + w] = value
        else:
            radius = 1.5 + a * (side / 4.0)
            cy = radius - 0.5 + c * (side - 2 * radius + 1)
            cx = radius - 0.5 + d * (side - 2 * radius + 1)
            mask = (rows - cy) ** 2 + (cols - cx) ** 2 <= radius**2
            imgs[i][mask] = value
    return Dataset(imgs.reshape(n, side * side), "shapes", seed, {"n": n, "side": side})


# ---------------------------------------------------------------------------
# files


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in ds.points:
                writer.writerow([repr(float(v)) for v in row])
        return
    n, dim = ds.points.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, dim))
        fh.write(ds.points.astype("<f8").tobytes())


def load_dataset(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if not raw:
        raise DatasetFormatError(f"{path}: empty file")
    if path.suffix.lower() == ".csv":
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DatasetFormatError(f"{path}: not UTF-8 text at offset {exc.start}") from None
        return _load_csv(text, path)
    if raw[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {raw[:4]!r} at offset 0")
    return _load_binary(raw, path)


def _load_binary(raw: bytes, path) -> Dataset:
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header at offset {len(raw)}")
    magic, version, n, dim = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version} at offset 4")
    if n < 1 or dim < 1:
        raise DatasetFormatError(f"{path}: bad extents n={n} dim={dim} at offset 6")
    want = _HEADER.size + 8 * n * dim
    if len(raw) != want:
        raise DatasetFormatError(
            f"{path}: payload size mismatch (dim inconsistency or truncation), "
            f"expected {want} bytes, found {len(raw)} at offset {min(len(raw), want)}")
    pts = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, dim).astype(np.float64)
    return Dataset(pts, path.stem)


def _load_csv(text: str, path) -> Dataset:
    rows = []
    width = None
    for r, line in enumerate(csv.reader(text.splitlines()), start=1):
        if not line:
            continue
        if width is None:
            width = len(line)
        elif len(line) != width:
            raise DatasetFormatError(f"{path}: row {r} has {len(line)} columns, expected {width}")
        vals = []
        for c, cell in enumerate(line, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise DatasetFormatError(f"{path}: non-numeric cell {cell!r} at row {r}, column {c}") from None
        rows.append(vals)
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    return Dataset(np.array(rows), path.stem)
