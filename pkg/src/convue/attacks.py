"""Convolution-based unlearnable examples and bounded-noise stand-ins.

Every sample of class ``y`` is convolved with the same kernel ``K_y``
(multiplicative, norm-unconstrained noise). The bounded stand-ins add a
class-wise perturbation instead; they serve as non-convolutional negatives
for the edge detector.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .imagecore import LabeledDataset, SeedSpec


class KernelKind(str, enum.Enum):
    CUDA = "cuda"
    HUDA = "huda"
    VUDA = "vuda"


class NoiseKind(str, enum.Enum):
    URP_LIKE = "urp_like"
    OPS_LIKE = "ops_like"
    LSP_LIKE = "lsp_like"


@dataclass(frozen=True)
class ConvKernel:
    weights: np.ndarray  # (T, T), shared by all channels

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"kernel must be square, got shape {w.shape}")
        if w.shape[0] % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def identity(cls, size: int = 3) -> "ConvKernel":
        w = np.zeros((size, size))
        w[size // 2, size // 2] = 1.0
        return cls(w)


@dataclass(frozen=True)
class ClasswiseKernelSet:
    kernels: tuple[ConvKernel, ...]
    kind: KernelKind
    blur_params: tuple[float, ...]

    def __post_init__(self):
        if len(self.kernels) != len(self.blur_params):
            raise ValueError("one blur parameter per kernel expected")
        if len({k.size for k in self.kernels}) > 1:
            raise ValueError("all kernels in a set share one size")

    def __len__(self) -> int:
        return len(self.kernels)

    @property
    def size(self) -> int:
        return self.kernels[0].size

    def stacked(self) -> np.ndarray:
        return np.stack([k.weights for k in self.kernels])


def make_kernel_set(
    kind: KernelKind | str,
    class_count: int,
    T: int,
    blur_base: float,
    blur_step: float,
    seed: SeedSpec | None = None,
) -> ClasswiseKernelSet:
    """Build one kernel per class with blur parameter ``b_y = blur_base + y * blur_step``.

    HUDA fills the middle row with ``b_y``, VUDA the middle column. CUDA keeps a
    unit centre and draws every off-centre weight from ``U[0, b_y]`` using the
    class index as the stream index of ``seed``.
    """
    kind = KernelKind(kind)
    if T < 3 or T % 2 == 0:
        raise ValueError(f"kernel size T must be odd and >= 3, got {T}")
    if class_count < 1:
        raise ValueError("class_count must be >= 1")
    if blur_base <= 0:
        raise ValueError("blur_base must be positive")
    if kind is KernelKind.CUDA and seed is None:
        raise ValueError("CUDA kernels need a seed")

    mid = T // 2
    kernels, blurs = [], []
    for y in range(class_count):
        b = blur_base + y * blur_step
        w = np.zeros((T, T))
        if kind is KernelKind.HUDA:
            w[mid, :] = b
        elif kind is KernelKind.VUDA:
            w[:, mid] = b
        else:
            w = seed.generator(y).uniform(0.0, b, size=(T, T))
            w[mid, mid] = 1.0
        kernels.append(ConvKernel(w))
        blurs.append(float(b))
    return ClasswiseKernelSet(tuple(kernels), kind, tuple(blurs))


def conv2d_same(images: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' correlation of ``(..., H, W)`` planes with a T x T kernel.

    ``out[h, w] = sum_{j,k} K[j, k] * x[h + j - T//2, w + k - T//2]`` with
    out-of-range pixels read as 0 (the deep-learning convolution convention).
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    t = kernel.shape[0]
    p = t // 2
    x = np.asarray(images, dtype=np.float64)
    h, w = x.shape[-2:]
    pad = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    xp = np.pad(x, pad)
    out = np.zeros_like(x)
    for j in range(t):
        for k in range(t):
            if kernel[j, k] != 0.0:
                out += kernel[j, k] * xp[..., j : j + h, k : k + w]
    return out


def convolve_raw(ds: LabeledDataset, ks: ClasswiseKernelSet) -> np.ndarray:
    """Per-class convolution before clipping, as float64."""
    if ds.class_count != len(ks):
        raise ValueError(f"dataset has {ds.class_count} classes, kernel set has {len(ks)} kernels")
    out = np.empty(ds.images.shape, dtype=np.float64)
    for y in range(len(ks)):
        idx = np.flatnonzero(ds.labels == y)
        if idx.size:
            out[idx] = conv2d_same(ds.images[idx], ks.kernels[y].weights)
    return out


def apply_classwise_convolution(ds: LabeledDataset, ks: ClasswiseKernelSet) -> LabeledDataset:
    return ds.with_images(np.clip(convolve_raw(ds, ks), 0.0, 1.0).astype(np.float32))


# --------------------------------------------------------------------------- #
# bounded stand-ins


@dataclass(frozen=True)
class BoundedNoiseSpec:
    kind: NoiseKind
    epsilon: float = 8 / 255
    patch_size: int = 8

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.kind is not NoiseKind.OPS_LIKE and not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")


# Non-black corners of the RGB cube; OPS_like picks one per class.
_OPS_COLOURS = np.array(
    [[1, 1, 1], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [1, 0, 1], [0, 1, 1]], dtype=np.float64
)


def class_noise(spec: BoundedNoiseSpec, shape: tuple[int, int, int], y: int, seed: SeedSpec):
    """Class ``y``'s perturbation.

    Returns ``delta`` for additive kinds, or ``(row, col, colour)`` for OPS_like
    (the pixel at ``(row, col)`` is overwritten with ``colour``).
    """
    c, h, w = shape
    rng = seed.generator(y)
    if spec.kind is NoiseKind.URP_LIKE:
        return rng.uniform(-spec.epsilon, spec.epsilon, size=shape)
    if spec.kind is NoiseKind.LSP_LIKE:
        p = spec.patch_size
        gh, gw = -(-h // p), -(-w // p)
        blocks = rng.uniform(-spec.epsilon, spec.epsilon, size=(c, gh, gw))
        return np.repeat(np.repeat(blocks, p, axis=1), p, axis=2)[:, :h, :w]
    row, col = int(rng.integers(h)), int(rng.integers(w))
    colour = _OPS_COLOURS[y % len(_OPS_COLOURS)][:c]
    return row, col, colour


def apply_bounded_noise(ds: LabeledDataset, spec: BoundedNoiseSpec, seed: SeedSpec) -> LabeledDataset:
    out = ds.images.astype(np.float64)
    for y in range(ds.class_count):
        idx = np.flatnonzero(ds.labels == y)
        if not idx.size:
            continue
        noise = class_noise(spec, ds.image_shape, y, seed)
        if spec.kind is NoiseKind.OPS_LIKE:
            row, col, colour = noise
            out[np.ix_(idx, np.arange(len(colour)), [row], [col])] = colour[None, :, None, None]
        else:
            out[idx] += noise
    return ds.with_images(np.clip(out, 0.0, 1.0).astype(np.float32))
