import os
import struct
from pathlib import Path

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given
from hypothesis.extra.numpy import arrays
from PIL import Image

from convue.imagecore import (
    CorruptRecordError,
    FormatError,
    ImageTensor,
    LabeledDataset,
    SeedSpec,
    UnsupportedFormatError,
    concat,
    export_png,
    import_png,
    load_cifar10_batch,
    load_ueds,
    parse_ueds,
    save_cifar10_batch,
    save_ueds,
    ueds_bytes,
)
from oracles import cifar_record

unit = st.floats(0.0, 1.0, allow_nan=False, width=32)


@st.composite
def datasets(draw, max_n=5):
    n = draw(st.integers(1, max_n))
    c = draw(st.integers(1, 3))
    h = draw(st.integers(1, 4))
    w = draw(st.integers(1, 4))
    k = draw(st.integers(1, 6))
    images = draw(arrays(np.float32, (n, c, h, w), elements=unit))
    labels = draw(arrays(np.int64, (n,), elements=st.integers(0, k - 1)))
    return LabeledDataset(images, labels, k)


def test_image_tensor_rejects_out_of_range():
    with pytest.raises(ValueError):
        ImageTensor(np.full((3, 2, 2), 1.5))
    with pytest.raises(ValueError):
        ImageTensor(np.full((3, 2, 2), np.nan))
    with pytest.raises(ValueError):
        ImageTensor(np.zeros((2, 2)))


def test_image_tensor_is_read_only():
    img = ImageTensor(np.zeros((3, 2, 2)))
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1.0
    assert img.shape == (3, 2, 2) and img.flat().size == 12


def test_dataset_validates_labels():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 3, 2, 2)), [0, 3], 3)
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 3, 2, 2)), [0], 3)


def test_dataset_access_and_concat():
    a = LabeledDataset(np.zeros((2, 3, 2, 2)), [0, 1], 2)
    b = LabeledDataset(np.ones((1, 3, 2, 2)), [2], 3)
    both = concat([a, b])
    assert len(both) == 3 and both.class_count == 3
    img, y = both[2]
    assert y == 2 and float(img.pixels.min()) == 1.0
    assert [lab for _, lab in both] == [0, 1, 2]


class TestCifar:
    def test_all_255_label_3(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(cifar_record(3, np.full(3072, 255)))
        ds = load_cifar10_batch(p)
        assert ds[0][1] == 3
        assert np.all(ds.images == 1.0)

    def test_all_zero(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(cifar_record(0, np.zeros(3072)))
        assert np.all(load_cifar10_batch(p).images == 0.0)

    def test_planar_order(self, tmp_path):
        px = np.arange(3072) % 256
        p = tmp_path / "b.bin"
        p.write_bytes(cifar_record(5, px) + cifar_record(1, px[::-1]))
        ds = load_cifar10_batch(p)
        assert list(ds.labels) == [5, 1]
        # R plane first, row-major
        assert ds.images[0, 0, 0, 1] == np.float32(1 / 255)
        assert ds.images[0, 1, 0, 0] == np.float32((1024 % 256) / 255)
        assert ds.images[0, 0, 1, 0] == np.float32(32 / 255)

    def test_truncated_reports_offset(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(cifar_record(1, np.zeros(3072)) + b"\x01\x02")
        with pytest.raises(FormatError, match="3073"):
            load_cifar10_batch(p)

    def test_bad_label(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(cifar_record(1, np.zeros(3072)) + cifar_record(10, np.zeros(3072)))
        with pytest.raises(CorruptRecordError, match="record 1"):
            load_cifar10_batch(p)

    def test_save_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        px = rng.integers(0, 256, (4, 3, 32, 32))
        ds = LabeledDataset(px / 255.0, [0, 9, 3, 3], 10)
        save_cifar10_batch(ds, tmp_path / "x.bin")
        assert load_cifar10_batch(tmp_path / "x.bin") == ds


class TestUeds:
    def test_known_length(self, tmp_path):
        ds = LabeledDataset(np.full((1, 3, 2, 2), 0.25), [0], 1)
        save_ueds(ds, tmp_path / "a.ueds")
        raw = (tmp_path / "a.ueds").read_bytes()
        assert len(raw) == 4 + 1 + 4 + 12 + 2 + 48 == 71
        assert raw[:5] == b"UEDS\x01"
        assert struct.unpack("<IIII", raw[5:21]) == (1, 3, 2, 2)

    @given(datasets())
    def test_round_trip(self, ds):
        back = parse_ueds(ueds_bytes(ds), ds.class_count)
        assert back == ds
        assert back.images.tobytes() == ds.images.tobytes()

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ueds_bytes(LabeledDataset(np.zeros((0, 3, 2, 2)), [], 1))

    def test_bad_magic_version_length(self):
        raw = ueds_bytes(LabeledDataset(np.zeros((2, 1, 2, 2)), [0, 1], 2))
        with pytest.raises(FormatError, match="magic"):
            parse_ueds(b"XXXX" + raw[4:])
        with pytest.raises(FormatError, match="version"):
            parse_ueds(raw[:4] + b"\x02" + raw[5:])
        with pytest.raises(FormatError):
            parse_ueds(raw[:-1])
        with pytest.raises(FormatError):
            parse_ueds(raw[:3])

    def test_out_of_range_pixels_rejected(self):
        raw = bytearray(ueds_bytes(LabeledDataset(np.zeros((1, 1, 1, 1)), [0], 1)))
        raw[-4:] = struct.pack("<f", 2.0)
        with pytest.raises(ValueError):
            parse_ueds(bytes(raw))

    def test_class_count_default(self, tmp_path):
        save_ueds(LabeledDataset(np.zeros((2, 1, 1, 1)), [0, 4], 7), tmp_path / "a.ueds")
        assert load_ueds(tmp_path / "a.ueds").class_count == 5
        assert load_ueds(tmp_path / "a.ueds", 7).class_count == 7


class TestPng:
    def test_single_pixel(self, tmp_path):
        Image.fromarray(np.array([[[128, 64, 255]]], dtype=np.uint8)).save(tmp_path / "p.png")
        img = import_png(tmp_path / "p.png")
        assert np.allclose(img.pixels[:, 0, 0], [128 / 255, 64 / 255, 1.0])

    def test_black(self, tmp_path):
        Image.fromarray(np.zeros((4, 5, 3), np.uint8)).save(tmp_path / "p.png")
        img = import_png(tmp_path / "p.png")
        assert img.shape == (3, 4, 5) and not img.pixels.any()

    def test_round_trip(self, tmp_path):
        arr = np.random.default_rng(1).integers(0, 256, (6, 7, 3)).astype(np.uint8)
        Image.fromarray(arr).save(tmp_path / "a.png")
        export_png(import_png(tmp_path / "a.png"), tmp_path / "b.png")
        assert np.array_equal(np.asarray(Image.open(tmp_path / "b.png")), arr)

    def test_export_rounds(self, tmp_path):
        export_png(ImageTensor(np.full((3, 1, 1), 0.5)), tmp_path / "h.png")
        assert np.asarray(Image.open(tmp_path / "h.png"))[0, 0, 0] == 128

    @pytest.mark.parametrize("mode", ["L", "RGBA"])
    def test_unsupported_colour(self, tmp_path, mode):
        Image.new(mode, (2, 2)).save(tmp_path / "x.png")
        with pytest.raises(UnsupportedFormatError):
            import_png(tmp_path / "x.png")

    def test_sixteen_bit(self, tmp_path):
        Image.fromarray(np.zeros((2, 2), np.uint16)).save(tmp_path / "x.png")
        with pytest.raises(UnsupportedFormatError):
            import_png(tmp_path / "x.png")

    def test_not_png(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"GIF89a....")
        with pytest.raises(UnsupportedFormatError):
            import_png(tmp_path / "x.png")


class TestSeedSpec:
    @given(st.integers(0, 2**64 - 1), st.text(alphabet="abcxyz/_", max_size=8), st.integers(0, 10**6))
    def test_reproducible(self, master, tag, idx):
        a = SeedSpec(master, tag).generator(idx).random(4)
        b = SeedSpec(master, tag).generator(idx).random(4)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        s = SeedSpec(1, "coin")
        draws = {s.generator(i).random() for i in range(50)}
        draws |= {SeedSpec(1, "attack").generator(0).random(), SeedSpec(2, "coin").generator(0).random()}
        assert len(draws) == 52

    def test_child_tags(self):
        assert SeedSpec(3, "a").child("b") == SeedSpec(3, "a/b")

    def test_rejects_bad_seed(self):
        with pytest.raises(ValueError):
            SeedSpec(-1)
        with pytest.raises(ValueError):
            SeedSpec(1, "é")


@pytest.mark.skipif(not os.environ.get("CONVUE_CIFAR_DIR"), reason="set CONVUE_CIFAR_DIR to the CIFAR-10 binary folder")
def test_canonical_test_batch_first_record():
    path = Path(os.environ["CONVUE_CIFAR_DIR"]) / "test_batch.bin"
    head = path.read_bytes()[:2]
    ds = load_cifar10_batch(path)
    assert ds[0][1] == head[0] == 3
    assert ds.images[0, 0, 0, 0] == np.float32(head[1] / 255) == np.float32(158 / 255)
