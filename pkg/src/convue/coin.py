"""COIN: random-offset bilinear resampling.

Each output pixel ``i`` reads the input at ``(c_x + s_x, c_y + s_y)`` where the
offsets are drawn from ``U(-alpha, alpha)`` independently per pixel and per
image, interpolating bilinearly between the four surrounding pixels. Source
coordinates wrap around the image borders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import ImageTensor, LabeledDataset, SeedSpec

DEFAULT_ALPHA = 2.0

# s - floor(s) rounds up to 1.0 for tiny negative s; keep weights in [0, 1).
_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class ShiftField:
    alpha: float
    height: int
    width: int
    s_x: np.ndarray
    s_y: np.ndarray

    def __post_init__(self):
        n = self.height * self.width
        for name in ("s_x", "s_y"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if arr.shape != (n,):
                raise ValueError(f"{name} has {arr.size} entries, expected H*W = {n}")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def m_x(self) -> np.ndarray:
        return np.floor(self.s_x).astype(np.int64)

    @property
    def m_y(self) -> np.ndarray:
        return np.floor(self.s_y).astype(np.int64)

    @property
    def w_x(self) -> np.ndarray:
        return np.minimum(self.s_x - np.floor(self.s_x), _BELOW_ONE)

    @property
    def w_y(self) -> np.ndarray:
        return np.minimum(self.s_y - np.floor(self.s_y), _BELOW_ONE)

    def __len__(self) -> int:
        return self.s_x.size


@dataclass(frozen=True)
class CoordinateGrid:
    c_x: np.ndarray
    c_y: np.ndarray

    @classmethod
    def create(cls, height: int, width: int) -> "CoordinateGrid":
        i = np.arange(height * width)
        return cls(i % width, i // width)


def sample_shift_field(height: int, width: int, alpha: float, seed: SeedSpec, sample_index: int = 0) -> ShiftField:
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    rng = seed.generator(sample_index)
    n = height * width
    s_x = rng.uniform(-alpha, alpha, size=n)
    s_y = rng.uniform(-alpha, alpha, size=n)
    return ShiftField(float(alpha), height, width, s_x, s_y)


def neighbour_indices(field: ShiftField):
    """Flat indices of q11, q21, q12, q22 for every output pixel."""
    h, w = field.height, field.width
    grid = CoordinateGrid.create(h, w)
    x0 = np.mod(grid.c_x + field.m_x, w)
    x1 = np.mod(grid.c_x + field.m_x + 1, w)
    y0 = np.mod(grid.c_y + field.m_y, h)
    y1 = np.mod(grid.c_y + field.m_y + 1, h)
    return y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1


def bilinear_weights(field: ShiftField):
    """Weights for q11, q21, q12, q22; non-negative and summing to one."""
    wx, wy = field.w_x, field.w_y
    return (1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy


def _resample(planes: np.ndarray, field: ShiftField) -> np.ndarray:
    # planes: (..., H*W) float64
    idx = neighbour_indices(field)
    wts = bilinear_weights(field)
    out = np.zeros_like(planes)
    for q, wq in zip(idx, wts):
        out += wq * planes[..., q]
    return out


def transform(img: ImageTensor, field: ShiftField) -> ImageTensor:
    c, h, w = img.shape
    if (h, w) != (field.height, field.width):
        raise ValueError(f"field is {field.height}x{field.width}, image is {h}x{w}")
    planes = img.pixels.reshape(c, h * w).astype(np.float64)
    out = np.clip(_resample(planes, field), 0.0, 1.0)
    return ImageTensor(out.reshape(c, h, w).astype(np.float32))


def transform_array(images: np.ndarray, alpha: float, seed: SeedSpec, indices) -> np.ndarray:
    """COIN over a stack of images; image ``k`` uses the field for ``indices[k]``."""
    n, c, h, w = images.shape
    out = np.empty(images.shape, dtype=np.float32)
    flat = images.reshape(n, c, h * w).astype(np.float64)
    for k, idx in enumerate(indices):
        field = sample_shift_field(h, w, alpha, seed, int(idx))
        out[k] = np.clip(_resample(flat[k], field), 0.0, 1.0).reshape(c, h, w)
    return out


def defend_dataset(ds: LabeledDataset, alpha: float = DEFAULT_ALPHA, seed: SeedSpec | None = None) -> LabeledDataset:
    if seed is None:
        seed = SeedSpec(0, "coin")
    return ds.with_images(transform_array(ds.images, alpha, seed, range(len(ds))))
