import numpy as np

from convue.imagecore import SeedSpec
from convue.synthetic import class_prototypes, texture_dataset


def test_shapes_labels_and_range():
    ds = texture_dataset(4, 3, SeedSpec(0, "syn"), size=16)
    assert ds.images.shape == (12, 3, 16, 16)
    assert np.array_equal(np.bincount(ds.labels), [4, 4, 4])
    assert ds.images.min() >= 0 and ds.images.max() <= 1


def test_reproducible_and_offsets_differ():
    seed = SeedSpec(1, "syn")
    assert texture_dataset(3, 2, seed, size=8) == texture_dataset(3, 2, seed, size=8)
    assert texture_dataset(3, 2, seed, size=8) != texture_dataset(3, 2, seed, size=8, index_offset=100)


def test_zero_separation_merges_classes():
    seed = SeedSpec(2, "syn")
    protos = class_prototypes(2, seed, 8)
    merged = texture_dataset(200, 2, seed, size=8, protos=protos, separation=0.0)
    a = merged.images[merged.labels == 0].mean(axis=0)
    b = merged.images[merged.labels == 1].mean(axis=0)
    apart = texture_dataset(200, 2, seed, size=8, protos=protos, separation=1.0)
    c = apart.images[apart.labels == 0].mean(axis=0)
    d = apart.images[apart.labels == 1].mean(axis=0)
    assert np.abs(a - b).mean() < np.abs(c - d).mean() / 3
