import numpy as np
import pytest

from majority_kernels import data
from majority_kernels.data import (
    BatchIterator,
    DataError,
    load_cifar10,
    make_blob_splits,
    make_blobs,
    parse_cifar_bytes,
    serialize_cifar,
)
from majority_kernels.numeric import ContractError, RngStream

from conftest import FIXTURES

MINI = FIXTURES / "cifar10_mini"


def test_fixture_roundtrip_bit_exact():
    for path in sorted(MINI.glob("*.bin")):
        raw = path.read_bytes()
        labels, pixels = parse_cifar_bytes(raw, str(path))
        assert serialize_cifar(labels, pixels) == raw


def test_load_fixture_split_and_standardization():
    splits = load_cifar10(MINI, val_size=30, strict=False)
    assert (len(splits.train), len(splits.val), len(splits.test)) == (120, 30, 50)
    np.testing.assert_allclose(splits.train.features.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(splits.train.features.std(axis=0), 1.0, atol=1e-12)
    # standardization inverts back to the stored bytes
    _, test_pixels = data.read_cifar_file(MINI / "test_batch.bin")
    restored = (splits.test.features * splits.std + splits.mean) * 255.0
    np.testing.assert_allclose(restored, test_pixels, atol=1e-9)
    again = load_cifar10(MINI, val_size=30, strict=False)
    assert np.array_equal(again.val.labels, splits.val.labels)


def test_strict_mode_rejects_fixture():
    with pytest.raises(DataError, match="expected 10000"):
        load_cifar10(MINI)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(DataError, match="data_batch_1.bin"):
        load_cifar10(tmp_path)


def test_truncated_file(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"\x00" * 3000)
    with pytest.raises(DataError, match="x.bin"):
        data.read_cifar_file(path)


def test_label_range_enforced():
    raw = bytearray(serialize_cifar([3, 4], np.zeros((2, 3072))))
    raw[3073] = 10
    with pytest.raises(DataError, match="record 1 has label byte 10"):
        parse_cifar_bytes(bytes(raw))


def test_blobs_shape_and_separation():
    d = make_blobs(RngStream(0), 3, 100, 5, 8.0)
    assert d.features.shape == (300, 5)
    assert np.bincount(d.labels).tolist() == [100, 100, 100]
    centers = np.array([d.features[d.labels == c].mean(axis=0) for c in range(3)])
    dist = np.linalg.norm(centers[0] - centers[1])
    assert abs(dist - 8.0) < 0.6
    with pytest.raises(ContractError, match="empty"):
        make_blobs(RngStream(0), 2, 0, 5, 1.0)


def test_blob_splits_deterministic():
    a = make_blob_splits(4)
    b = make_blob_splits(4)
    assert np.array_equal(a.train.features, b.train.features)
    assert not np.array_equal(a.train.features, a.test.features[: len(a.train)])


def test_batch_iterator_covers_each_epoch():
    it = BatchIterator(10, 4, RngStream(0))
    assert it.steps_per_epoch() == 3
    epoch = [next(it) for _ in range(3)]
    assert [len(b) for b in epoch] == [4, 4, 2]
    assert sorted(np.concatenate(epoch).tolist()) == list(range(10))
    nxt = np.concatenate([next(it) for _ in range(3)])
    assert sorted(nxt.tolist()) == list(range(10))


def test_default_data_dir(monkeypatch, tmp_path):
    monkeypatch.setenv("MK_DATA_DIR", str(tmp_path))
    assert data.default_data_dir() == tmp_path
