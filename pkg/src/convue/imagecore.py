"""Image tensors, datasets, binary formats and seeded random streams.

Images are planar ``C x H x W`` float32 arrays in ``[0, 1]``. A dataset keeps
all images of one shape stacked in a single ``(N, C, H, W)`` array so the
attack/defense code can vectorise over samples.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

CIFAR_RECORD = 1 + 3 * 32 * 32
UEDS_MAGIC = b"UEDS"
UEDS_VERSION = 1
_UEDS_HEADER = struct.Struct("<4sBIIII")

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class FormatError(ValueError):
    """Malformed or truncated binary input."""


class CorruptRecordError(FormatError):
    pass


class UnsupportedFormatError(FormatError):
    pass


def _check_pixels(arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite pixel values")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"pixels outside [0, 1]: min={arr.min()}, max={arr.max()}")


@dataclass(frozen=True)
class ImageTensor:
    pixels: np.ndarray  # (C, H, W) float32

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"expected a C x H x W array, got shape {arr.shape}")
        _check_pixels(arr)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class LabeledDataset:
    """Stack of equally shaped images with integer class labels."""

    images: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) int64
    class_count: int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if images.ndim != 4:
            raise ValueError(f"expected (N, C, H, W) images, got shape {images.shape}")
        if images.shape[0] != labels.shape[0]:
            raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count - 1}]")
        _check_pixels(images)
        images = images.copy()
        labels = labels.copy()
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_images(cls, images, labels, class_count: int) -> "LabeledDataset":
        arrs = [im.pixels if isinstance(im, ImageTensor) else np.asarray(im) for im in images]
        if len({a.shape for a in arrs}) > 1:
            raise ValueError("images must share one shape")
        return cls(np.stack(arrs) if arrs else np.zeros((0, 3, 1, 1), np.float32), labels, class_count)

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, i: int) -> tuple[ImageTensor, int]:
        return ImageTensor(self.images[i]), int(self.labels[i])

    def __iter__(self) -> Iterator[tuple[ImageTensor, int]]:
        for i in range(len(self)):
            yield self[i]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def with_images(self, images: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(images, self.labels, self.class_count)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.images[idx], self.labels[idx], self.class_count)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.images.shape == other.images.shape
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.images, other.images)
        )

    __hash__ = None


def concat(datasets: list[LabeledDataset]) -> LabeledDataset:
    return LabeledDataset(
        np.concatenate([d.images for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
        max(d.class_count for d in datasets),
    )


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus a consumer tag; each sample index gets its own stream.

    Streams are keyed on ``(master_seed, stream_tag, index)`` so the draw for
    a sample does not depend on the order in which samples are processed.
    """

    master_seed: int
    stream_tag: str = "default"
    _tag_key: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if not self.stream_tag.isascii():
            raise ValueError("stream_tag must be ASCII")
        digest = hashlib.sha256(self.stream_tag.encode("ascii")).digest()
        object.__setattr__(self, "_tag_key", int.from_bytes(digest[:8], "little"))

    def sequence(self, index: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([int(self.master_seed), self._tag_key, int(index)])

    def generator(self, index: int = 0) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence(index)))

    def child(self, tag: str) -> "SeedSpec":
        return SeedSpec(self.master_seed, f"{self.stream_tag}/{tag}")


# --------------------------------------------------------------------------- #
# CIFAR-10 binary batches


def load_cifar10_batch(path) -> LabeledDataset:
    raw = Path(path).read_bytes()
    n_full, rem = divmod(len(raw), CIFAR_RECORD)
    if rem:
        raise FormatError(
            f"{path}: truncated record at byte offset {n_full * CIFAR_RECORD} "
            f"(file length {len(raw)} is not a multiple of {CIFAR_RECORD})"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(n_full, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        i = int(bad[0])
        raise CorruptRecordError(
            f"{path}: record {i} at byte offset {i * CIFAR_RECORD} has label byte {labels[i]}"
        )
    images = records[:, 1:].reshape(n_full, 3, 32, 32).astype(np.float32) / np.float32(255.0)
    return LabeledDataset(images, labels, 10)


def save_cifar10_batch(ds: LabeledDataset, path) -> None:
    """Write 3x32x32 images as CIFAR-10 records (pixels rounded to bytes)."""
    if ds.image_shape != (3, 32, 32):
        raise ValueError(f"CIFAR-10 records hold 3x32x32 images, got {ds.image_shape}")
    if ds.class_count > 10:
        raise ValueError("CIFAR-10 labels are single digits")
    px = np.clip(np.rint(ds.images.reshape(len(ds), -1) * 255.0), 0, 255).astype(np.uint8)
    out = np.concatenate([ds.labels.astype(np.uint8)[:, None], px], axis=1)
    atomic_write_bytes(path, out.tobytes())


# --------------------------------------------------------------------------- #
# UEDS container


def ueds_bytes(ds: LabeledDataset) -> bytes:
    if len(ds) == 0:
        raise ValueError("cannot save an empty dataset")
    if ds.labels.max() > 0xFFFF:
        raise ValueError("labels must fit in u16")
    n = len(ds)
    c, h, w = ds.image_shape
    header = _UEDS_HEADER.pack(UEDS_MAGIC, UEDS_VERSION, n, c, h, w)
    rec = np.dtype([("label", "<u2"), ("px", "<f4", (c * h * w,))])
    body = np.empty(n, dtype=rec)
    body["label"] = ds.labels
    body["px"] = ds.images.reshape(n, -1)
    return header + body.tobytes()


def save_ueds(ds: LabeledDataset, path) -> None:
    atomic_write_bytes(path, ueds_bytes(ds))


def parse_ueds(raw: bytes, class_count: int | None = None) -> LabeledDataset:
    if len(raw) < _UEDS_HEADER.size:
        raise FormatError(f"file too short for a UEDS header ({len(raw)} bytes)")
    magic, version, n, c, h, w = _UEDS_HEADER.unpack_from(raw)
    if magic != UEDS_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != UEDS_VERSION:
        raise FormatError(f"unsupported UEDS version {version}")
    rec = np.dtype([("label", "<u2"), ("px", "<f4", (c * h * w,))])
    expected = _UEDS_HEADER.size + n * rec.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"header declares {n} records of {c}x{h}x{w} ({expected} bytes), file has {len(raw)}"
        )
    body = np.frombuffer(raw, dtype=rec, offset=_UEDS_HEADER.size, count=n)
    labels = body["label"].astype(np.int64)
    images = body["px"].astype(np.float32).reshape(n, c, h, w)
    if class_count is None:
        class_count = int(labels.max()) + 1 if n else 1
    return LabeledDataset(images, labels, class_count)


def load_ueds(path, class_count: int | None = None) -> LabeledDataset:
    """Read a UEDS file.

    The container does not store the class count; it defaults to
    ``max(label) + 1`` unless given.
    """
    return parse_ueds(Path(path).read_bytes(), class_count)


# --------------------------------------------------------------------------- #
# PNG


def _png_header(raw: bytes) -> tuple[int, int, int, int]:
    if raw[:8] != PNG_SIGNATURE or raw[12:16] != b"IHDR":
        raise UnsupportedFormatError("not a PNG file")
    width, height, depth, colour = struct.unpack(">IIBB", raw[16:26])
    return width, height, depth, colour


def import_png(path) -> ImageTensor:
    from PIL import Image

    raw = Path(path).read_bytes()
    _, _, depth, colour = _png_header(raw)
    if colour != 2 or depth != 8:
        raise UnsupportedFormatError(
            f"{path}: only 8-bit RGB PNGs are supported (bit depth {depth}, colour type {colour})"
        )
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.uint8)
    return ImageTensor(arr.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def to_bytes8(img: ImageTensor) -> np.ndarray:
    """Round to nearest 8-bit value, clamped; returns H x W x C uint8."""
    px = np.clip(np.rint(img.pixels.astype(np.float64) * 255.0), 0, 255)
    return px.astype(np.uint8).transpose(1, 2, 0)


def export_png(img: ImageTensor, path) -> None:
    from PIL import Image

    if img.channels != 3:
        raise UnsupportedFormatError("PNG export needs a 3-channel image")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", suffix=".png.tmp")
    os.close(fd)
    try:
        Image.fromarray(to_bytes8(img)).save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
