import gzip
import struct

import numpy as np
import pytest

from ecad.dataset import (
    DatasetError,
    load_mnist,
    one_hot,
    read_idx_images,
    read_idx_labels,
    synthetic_mnist,
    write_idx_images,
    write_idx_labels,
)

from conftest import find_mnist_dir


def write_split(dir_path, n_train=12, n_test=5, value=0):
    rng = np.random.default_rng(0)
    for stem, n in [("train", n_train), ("t10k", n_test)]:
        images = np.full((n, 784), value, dtype=np.uint8)
        labels = rng.integers(0, 10, n).astype(np.uint8)
        write_idx_images(dir_path / f"{stem}-images-idx3-ubyte", images)
        write_idx_labels(dir_path / f"{stem}-labels-idx1-ubyte", labels)


class TestIdxFiles:
    def test_zero_images_round_trip(self, tmp_path):
        write_split(tmp_path, n_train=10, n_test=3, value=0)
        data = load_mnist(tmp_path)
        assert data.train_x.shape == (10, 784)
        assert np.all(data.train_x == 0)
        assert data.test_x.shape == (3, 784)

    def test_normalization_by_255(self, tmp_path):
        write_split(tmp_path, value=255)
        data = load_mnist(tmp_path)
        assert np.all(data.train_x == 1.0)
        assert data.train_x.dtype == np.float32

    def test_one_hot_rows_sum_to_one(self, tmp_path):
        write_split(tmp_path)
        data = load_mnist(tmp_path)
        assert np.array_equal(data.train_y.sum(axis=1), np.ones(12, dtype=np.float32))
        assert data.train_y.shape == (12, 10)

    def test_bad_images_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(struct.pack(">IIII", 1234, 1, 28, 28) + b"\x00" * 784)
        with pytest.raises(DatasetError, match="magic"):
            read_idx_images(path)

    def test_bad_labels_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(struct.pack(">II", 2051, 1) + b"\x00")
        with pytest.raises(DatasetError, match="magic"):
            read_idx_labels(path)

    def test_truncated_images(self, tmp_path):
        path = tmp_path / "trunc"
        path.write_bytes(struct.pack(">IIII", 2051, 10, 28, 28) + b"\x00" * 100)
        with pytest.raises(DatasetError, match="truncated"):
            read_idx_images(path)

    def test_count_mismatch(self, tmp_path):
        write_split(tmp_path, n_train=100)
        labels = np.zeros(99, dtype=np.uint8)
        write_idx_labels(tmp_path / "train-labels-idx1-ubyte", labels)
        with pytest.raises(DatasetError, match="100 images but 99 labels"):
            load_mnist(tmp_path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError, match="missing IDX file"):
            load_mnist(tmp_path)

    def test_gzip_variant(self, tmp_path):
        write_split(tmp_path, value=128)
        for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                     "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
            raw = (tmp_path / name).read_bytes()
            (tmp_path / name).unlink()
            with gzip.open(tmp_path / (name + ".gz"), "wb") as fh:
                fh.write(raw)
        data = load_mnist(tmp_path)
        assert data.train_x.shape == (12, 784)
        assert np.allclose(data.train_x, 128 / 255)


class TestSynthetic:
    def test_shapes_and_ranges(self):
        data = synthetic_mnist(seed=0, n_train=100, n_test=40)
        assert data.train_x.shape == (100, 784)
        assert data.test_y.shape == (40, 10)
        assert data.train_x.min() >= 0.0 and data.train_x.max() <= 1.0
        assert np.array_equal(data.train_y.sum(axis=1), np.ones(100, dtype=np.float32))

    def test_deterministic(self):
        a = synthetic_mnist(seed=3, n_train=50, n_test=10)
        b = synthetic_mnist(seed=3, n_train=50, n_test=10)
        assert np.array_equal(a.train_x, b.train_x)
        assert np.array_equal(a.test_y, b.test_y)

    def test_subset(self):
        data = synthetic_mnist(seed=0, n_train=100, n_test=40).subset(30)
        assert data.train_x.shape == (30, 784)
        assert data.test_x.shape == (40, 784)


def test_one_hot_basic():
    out = one_hot(np.array([0, 3, 9], dtype=np.uint8))
    assert out.shape == (3, 10)
    assert out[1, 3] == 1.0 and out[1].sum() == 1.0


@pytest.mark.skipif(find_mnist_dir() is None, reason="real MNIST IDX files not available")
def test_real_mnist_counts():
    data = load_mnist(find_mnist_dir())
    assert data.train_x.shape == (60000, 784)
    assert data.test_x.shape == (10000, 784)
