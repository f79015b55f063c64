"""Edge Pixel-based Detector (EPD).

Zero-padded convolution leaves the outermost rows/columns with fewer kernel
taps than the interior, which shows up in the sums of the four image borders.
EPD summarises each channel by those four sums (12 numbers for RGB) and
separates convolution-based UEs from everything else with a linear SVM.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import coin
from .imagecore import ImageTensor, LabeledDataset, SeedSpec, atomic_write_text

FEATURE_DIM = 12
DEFAULT_CP = 0.1
DEFAULT_THETA = 0.0
DEFAULT_EPOCHS = 2000


def edge_features(images: np.ndarray) -> np.ndarray:
    """``(N, 3, H, W)`` -> ``(N, 12)`` ordered [R top, bottom, left, right | G ... | B ...].

    Corner pixels count in both their row sum and their column sum.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValueError(f"edge features need (N, 3, H, W) images, got {images.shape}")
    top = images[:, :, 0, :].sum(axis=-1)
    bottom = images[:, :, -1, :].sum(axis=-1)
    left = images[:, :, :, 0].sum(axis=-1)
    right = images[:, :, :, -1].sum(axis=-1)
    return np.stack([top, bottom, left, right], axis=-1).reshape(images.shape[0], FEATURE_DIM)


def extract_edge_feature(img: ImageTensor) -> np.ndarray:
    if img.channels != 3:
        raise ValueError(f"EPD needs a 3-channel image, got {img.channels}")
    return edge_features(img.pixels[None])[0]


@dataclass(frozen=True)
class LinearSvmModel:
    w: np.ndarray
    b: float
    c_p: float
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        for name in ("w", "mean", "scale"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.scale <= 0):
            raise ValueError("standardisation scales must be positive")

    def standardize(self, feats: np.ndarray) -> np.ndarray:
        return (np.asarray(feats, dtype=np.float64) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {
            "w": self.w.tolist(),
            "b": float(self.b),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "c_p": float(self.c_p),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearSvmModel":
        return cls(np.array(d["w"]), float(d["b"]), float(d["c_p"]), np.array(d["mean"]), np.array(d["scale"]))

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "LinearSvmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def svm_objective(w: np.ndarray, b: float, x: np.ndarray, t: np.ndarray, c_p: float) -> float:
    """``0.5 * |w|^2 + C_p * sum(hinge)`` on already standardised features."""
    margins = t * (x @ w + b)
    return float(0.5 * w @ w + c_p * np.maximum(0.0, 1.0 - margins).sum())


def train_svm(features, labels, c_p: float = DEFAULT_CP, epochs: int = DEFAULT_EPOCHS) -> LinearSvmModel:
    """Soft-margin linear SVM by deterministic full-batch subgradient descent.

    The objective ``0.5|w|^2 + C_p * sum_i hinge_i`` equals ``C_p * n`` times
    ``lambda/2 |w|^2 + mean_i hinge_i`` with ``lambda = 1 / (C_p n)``; the latter is
    minimised with steps ``1 / (lambda t)``. The bias is unregularised. The
    iterate with the lowest objective is returned.
    """
    x_raw = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if x_raw.ndim != 2 or x_raw.shape[0] != labels.size:
        raise ValueError("features must be (n, k) with one label per row")
    if not set(np.unique(labels)) <= {0, 1}:
        raise ValueError("labels must be 0 or 1")
    if np.unique(labels).size < 2:
        raise ValueError("training needs both classes")
    if c_p <= 0:
        raise ValueError("c_p must be positive")

    mean = x_raw.mean(axis=0)
    scale = x_raw.std(axis=0)
    scale[scale == 0] = 1.0
    x = (x_raw - mean) / scale
    t = np.where(labels == 1, 1.0, -1.0)
    n, k = x.shape
    lam = 1.0 / (c_p * n)

    w = np.zeros(k)
    b = 0.0
    best = (svm_objective(w, b, x, t, c_p), w.copy(), b)
    for step in range(1, epochs + 1):
        viol = t * (x @ w + b) < 1.0
        gw = lam * w - (t[viol, None] * x[viol]).sum(axis=0) / n
        gb = -t[viol].sum() / n
        eta = 1.0 / (lam * step)
        w = w - eta * gw
        b = b - eta * gb
        # Pegasos projection onto the ball that contains the optimum
        norm = np.linalg.norm(w)
        radius = 1.0 / np.sqrt(lam)
        if norm > radius:
            w = w * (radius / norm)
        obj = svm_objective(w, b, x, t, c_p)
        if obj < best[0]:
            best = (obj, w.copy(), b)
    _, w, b = best
    return LinearSvmModel(w, float(b), float(c_p), mean, scale)


def decision_scores(model: LinearSvmModel, feats: np.ndarray) -> np.ndarray:
    return model.standardize(feats) @ model.w + model.b


def decision_score(model: LinearSvmModel, feature) -> float:
    return float(decision_scores(model, np.asarray(feature)[None])[0])


def predict(model: LinearSvmModel, feature, theta: float = DEFAULT_THETA) -> int:
    """1 (convolution-based UE) iff the score reaches the threshold."""
    return int(decision_score(model, feature) >= theta)


def predict_images(model: LinearSvmModel, images: np.ndarray, theta: float = DEFAULT_THETA) -> np.ndarray:
    return (decision_scores(model, edge_features(images)) >= theta).astype(np.int64)


def route(
    model: LinearSvmModel,
    img: ImageTensor,
    alpha: float = coin.DEFAULT_ALPHA,
    seed: SeedSpec | None = None,
    sample_index: int = 0,
    theta: float = DEFAULT_THETA,
) -> ImageTensor:
    """Apply COIN only to images the detector flags as convolution-based."""
    if predict(model, extract_edge_feature(img), theta) != 1:
        return img
    seed = seed if seed is not None else SeedSpec(0, "coin")
    return coin.transform(img, coin.sample_shift_field(img.height, img.width, alpha, seed, sample_index))


def route_dataset(
    model: LinearSvmModel,
    ds: LabeledDataset,
    alpha: float = coin.DEFAULT_ALPHA,
    seed: SeedSpec | None = None,
    theta: float = DEFAULT_THETA,
) -> tuple[LabeledDataset, np.ndarray]:
    """Route every image; returns the routed dataset and the 0/1 detection flags."""
    seed = seed if seed is not None else SeedSpec(0, "coin")
    flags = predict_images(model, ds.images, theta)
    out = ds.images.copy()
    hit = np.flatnonzero(flags)
    if hit.size:
        out[hit] = coin.transform_array(ds.images[hit], alpha, seed, hit)
    return ds.with_images(out), flags
