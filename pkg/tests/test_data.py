import struct

import numpy as np
import pytest

from ensverify.data import (IMAGES_MAGIC, LABELS_MAGIC, Dataset, IdxFormatError, digits_dataset, downscale,
                            load_idx, make_splits, save_idx, write_digits_idx)


def _write(tmp_path, pixels, labels, img_magic=IMAGES_MAGIC, lab_magic=LABELS_MAGIC, n_lab=None):
    n, side = pixels.shape[0], pixels.shape[1]
    ip, lp = tmp_path / "img", tmp_path / "lab"
    ip.write_bytes(struct.pack(">IIII", img_magic, n, side, side) + pixels.astype(np.uint8).tobytes())
    lp.write_bytes(struct.pack(">II", lab_magic, n if n_lab is None else n_lab) + labels.astype(np.uint8).tobytes())
    return ip, lp


def test_load_scales_bytes(tmp_path):
    px = np.zeros((3, 2, 2), dtype=np.uint8)
    px[0, 0, 0] = 255
    ip, lp = _write(tmp_path, px, np.array([1, 2, 3]))
    d = load_idx(ip, lp)
    assert len(d) == 3 and d.dim == 4 and d.side == 2
    assert d.images[0, 0] == 1.0 and d.images[1, 0] == 0.0
    assert d.labels.tolist() == [1, 2, 3]


@pytest.mark.parametrize("img_magic,lab_magic", [(0x801, LABELS_MAGIC), (IMAGES_MAGIC, 0x803), (0x999, 0x801)])
def test_bad_magic(tmp_path, img_magic, lab_magic):
    ip, lp = _write(tmp_path, np.zeros((2, 2, 2)), np.array([0, 1]), img_magic, lab_magic)
    with pytest.raises(IdxFormatError):
        load_idx(ip, lp)


def test_truncated_and_mismatched(tmp_path):
    ip, lp = _write(tmp_path, np.zeros((2, 2, 2)), np.array([0, 1]))
    ip.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(IdxFormatError):
        load_idx(ip, lp)
    ip, lp = _write(tmp_path, np.zeros((2, 2, 2)), np.array([0, 1, 1]), n_lab=3)
    with pytest.raises(IdxFormatError):
        load_idx(ip, lp)


def test_label_range(tmp_path):
    ip, lp = _write(tmp_path, np.zeros((1, 2, 2)), np.array([12]))
    with pytest.raises((IdxFormatError, ValueError)):
        load_idx(ip, lp)


def test_save_load_round_trip(tmp_path):
    d = digits_dataset().subset(range(50))
    save_idx(d, tmp_path / "i", tmp_path / "l")
    back = load_idx(tmp_path / "i", tmp_path / "l")
    np.testing.assert_array_equal(back.images, d.images)
    np.testing.assert_array_equal(back.labels, d.labels)


def test_splits_arithmetic_and_determinism():
    n = 60000
    d = Dataset(np.zeros((n, 1)), np.zeros(n, dtype=np.int64), 10, 1)
    s = make_splits(d, 1 / 12, seed=3)
    assert len(s.train) == 55000 and len(s.validation) == 5000
    d = digits_dataset()
    a, b = make_splits(d, 0.25, 7), make_splits(d, 0.25, 7)
    np.testing.assert_array_equal(a.train.images, b.train.images)
    np.testing.assert_array_equal(a.validation.labels, b.validation.labels)


def test_splits_partition_is_a_bijection():
    n = 101
    d = Dataset(np.arange(n, dtype=float)[:, None] / n, np.zeros(n, dtype=np.int64), 10, 1)
    s = make_splits(d, 0.3, 0)
    ids = np.concatenate([s.train.images[:, 0], s.validation.images[:, 0]]) * n
    assert sorted(np.rint(ids).astype(int).tolist()) == list(range(n))


@pytest.mark.parametrize("f", [0.0, 1.0, -0.1])
def test_splits_reject_bad_fraction(f):
    with pytest.raises(ValueError):
        make_splits(digits_dataset(), f, 0)


def test_splits_reject_empty():
    d = Dataset(np.zeros((0, 4)), np.zeros(0, dtype=np.int64), 10, 2)
    with pytest.raises(ValueError):
        make_splits(d, 0.5, 0)


def test_downscale():
    const = Dataset(np.full((2, 16), 0.3), np.zeros(2, dtype=np.int64), 10, 4)
    np.testing.assert_allclose(downscale(const, 2).images, 0.3)
    board = (np.indices((28, 28)).sum(axis=0) % 2).astype(float).reshape(1, -1)
    d = downscale(Dataset(board, np.zeros(1, dtype=np.int64), 10, 28), 2)
    assert d.side == 14 and d.dim == 196
    np.testing.assert_allclose(d.images, 0.5)
    with pytest.raises(ValueError):
        downscale(const, 3)


def test_downscale_commutes_with_affine():
    rng = np.random.default_rng(0)
    d = Dataset(rng.uniform(size=(5, 64)), np.zeros(5, dtype=np.int64), 10, 8)
    mapped = Dataset(0.5 * d.images + 0.25, d.labels, 10, 8)
    np.testing.assert_allclose(downscale(mapped, 2).images, 0.5 * downscale(d, 2).images + 0.25)


def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset(np.full((1, 4), 1.5), np.zeros(1, dtype=np.int64), 10, 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 4)), np.zeros(1, dtype=np.int64), 10, 2)


def test_digits_idx_files(tmp_path):
    paths = write_digits_idx(tmp_path)
    train = load_idx(paths["train_images"], paths["train_labels"])
    test = load_idx(paths["test_images"], paths["test_labels"])
    assert len(train) + len(test) == 1797 and len(test) == 400
    assert train.side == 8 and train.images.min() >= 0 and train.images.max() <= 1
