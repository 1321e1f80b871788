import gzip
import struct

import numpy as np
import pytest

from dissent import data

MNIST_DIR = "data/mnist"


def write_pair(tmp_path, images, labels, compress=False):
    img, lbl = tmp_path / "img", tmp_path / "lbl"
    data.write_idx(images, labels, img, lbl)
    if compress:
        for p in (img, lbl):
            p.write_bytes(gzip.compress(p.read_bytes()))
    return img, lbl


@pytest.mark.parametrize("compress", [False, True])
def test_idx_round_trip_and_scaling(tmp_path, compress):
    images = np.array([[[0, 255], [128, 1]], [[255, 255], [0, 0]]], dtype=np.uint8)
    img, lbl = write_pair(tmp_path, images, [3, 7], compress)
    ds = data.load_idx(img, lbl)
    assert ds.inputs.shape == (2, 4)
    np.testing.assert_array_equal(ds.inputs[0], [0.0, 1.0, 128 / 255, 1 / 255])
    assert ds.labels.tolist() == [3, 7]
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1


def test_bad_magic_is_named(tmp_path):
    img, lbl = write_pair(tmp_path, np.zeros((1, 2, 2), np.uint8), [0])
    raw = bytearray(img.read_bytes())
    raw[3] = 0x01
    img.write_bytes(bytes(raw))
    with pytest.raises(data.IdxFormatError, match="magic"):
        data.load_idx(img, lbl)
    with pytest.raises(data.IdxFormatError, match="magic"):
        data.load_idx(lbl, lbl)


def test_label_count_mismatch(tmp_path):
    img, lbl = write_pair(tmp_path, np.zeros((2, 2, 2), np.uint8), [0])
    with pytest.raises(data.IdxFormatError):
        data.load_idx(img, lbl)


def test_out_of_range_label(tmp_path):
    img, lbl = write_pair(tmp_path, np.zeros((1, 2, 2), np.uint8), [12])
    with pytest.raises(data.IdxFormatError):
        data.load_idx(img, lbl)


def test_truncation_fuzz():
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(3, 4, 5), dtype=np.uint8)
    raw = struct.pack(">4i", data.IMAGE_MAGIC, 3, 4, 5) + images.tobytes()
    assert data.parse_idx_images(raw).shape == (3, 4, 5)
    for cut in range(len(raw)):
        with pytest.raises(data.IdxFormatError):
            data.parse_idx_images(raw[:cut])
    with pytest.raises(data.IdxFormatError):
        data.parse_idx_images(raw + b"\0")
    lab = struct.pack(">2i", data.LABEL_MAGIC, 4) + bytes([1, 2, 3, 4])
    for cut in range(len(lab)):
        with pytest.raises(data.IdxFormatError):
            data.parse_idx_labels(lab[:cut])


def test_dataset_validation():
    with pytest.raises(ValueError):
        data.Dataset(np.array([[1.5]]), [0])
    with pytest.raises(ValueError):
        data.Dataset(np.zeros((2, 3)), [0])
    with pytest.raises(ValueError):
        data.Dataset(np.zeros((1, 3)), [10])


def test_split_sizes_disjoint_and_seeded():
    ds = data.Dataset(np.linspace(0, 1, 600).reshape(60, 10), np.arange(60) % 10)
    tr, val = data.split(ds, 1 / 6, seed=3)
    assert (len(tr), len(val)) == (50, 10)
    rows = {r.tobytes() for r in tr.inputs} | {r.tobytes() for r in val.inputs}
    assert len(rows) == 60
    tr2, val2 = data.split(ds, 1 / 6, seed=3)
    assert np.array_equal(val.inputs, val2.inputs)
    assert not np.array_equal(val.inputs, data.split(ds, 1 / 6, seed=4)[1].inputs)
    with pytest.raises(ValueError):
        data.split(ds, 0.0)


def test_blobs_shape_and_balance():
    ds = data.synth_blobs(100, n_classes=4, dim=5, seed=1)
    assert ds.inputs.shape == (400, 5)
    assert np.bincount(ds.labels).tolist() == [100] * 4
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1
    again = data.synth_blobs(100, n_classes=4, dim=5, seed=1)
    assert np.array_equal(ds.inputs, again.inputs)


def test_mnist_files():
    train, test = data.load_mnist(MNIST_DIR)
    assert train.inputs.shape == (60000, 784)
    assert len(test) == 10000
    assert train.inputs.min() == 0.0 and train.inputs.max() == 1.0
    tr, val = data.split(train)
    assert (len(tr), len(val)) == (50000, 10000)
    assert np.bincount(test.labels).sum() == 10000
