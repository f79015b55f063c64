"""Seeded synthetic image classes used when no CIFAR-10 batch is supplied.

Each class has a smooth colour layout (its prototype). A sample is the
prototype at a random contrast and brightness, plus a smooth per-sample
random field and fine grain, clipped to [0, 1]. The result is natural-looking
in the sense that matters here: spatially correlated, with edges that look
statistically like the interior.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .imagecore import LabeledDataset, SeedSpec


def _smooth_field(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    f = gaussian_filter(rng.standard_normal(shape), sigma=(0, sigma, sigma), mode="wrap")
    return f / (f.std() + 1e-12)


def class_prototypes(class_count: int, seed: SeedSpec, size: int = 32) -> np.ndarray:
    """One smooth 3 x size x size layout per class, values roughly in [0.15, 0.85]."""
    protos = []
    for k in range(class_count):
        rng = seed.child("proto").generator(k)
        layout = _smooth_field(rng, (1, size, size), sigma=size / 6)
        tint = rng.uniform(0.6, 1.0, size=(3, 1, 1))
        protos.append(np.clip(0.5 + 0.22 * layout * tint + rng.uniform(-0.08, 0.08, (3, 1, 1)), 0, 1))
    return np.stack(protos)


def texture_dataset(
    n_per_class: int,
    class_count: int,
    seed: SeedSpec,
    size: int = 32,
    noise: float = 0.12,
    grain: float = 0.03,
    protos: np.ndarray | None = None,
    index_offset: int = 0,
    separation: float = 1.0,
) -> LabeledDataset:
    """Sample ``n_per_class`` images of every class.

    ``separation`` scales how far each class prototype sits from the mean of
    all prototypes (1 keeps them as drawn, 0 makes the classes identical).
    Sample ``i`` of class ``k`` draws from stream index
    ``index_offset + k * n_per_class + i``; use distinct offsets (or tags) for
    train and test splits that share prototypes.
    """
    if protos is None:
        protos = class_prototypes(class_count, seed, size)
    centre = protos.mean(axis=0)
    protos = centre + separation * (protos - centre)
    images = np.empty((class_count * n_per_class, 3, size, size), dtype=np.float32)
    labels = np.repeat(np.arange(class_count), n_per_class)
    sample_seed = seed.child("sample")
    for k in range(class_count):
        for i in range(n_per_class):
            j = k * n_per_class + i
            rng = sample_seed.generator(index_offset + j)
            contrast = rng.uniform(0.6, 1.4)
            brightness = rng.uniform(-0.12, 0.12)
            field = _smooth_field(rng, (3, size, size), sigma=rng.uniform(1.5, 4.0))
            x = 0.5 + contrast * (protos[k] - 0.5) + brightness
            x = x + noise * field + grain * rng.standard_normal((3, size, size))
            images[j] = np.clip(x, 0.0, 1.0)
    return LabeledDataset(images, labels, class_count)
