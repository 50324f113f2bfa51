import struct

import numpy as np
import pytest

from rtme.data import (
    build_split,
    dataset_csv,
    load_idx,
    make_gaussian_mixture,
    mixture_means,
    parse_idx,
    split_train_val,
    standardize,
    write_idx,
)
from rtme.errors import FormatError
from rtme.noise import LabeledDataset, NoiseSpec


@pytest.mark.parametrize("k,dim", [(4, 2), (3, 5), (6, 2), (2, 1), (5, 3)])
def test_mixture_means_pairwise_separation(k, dim):
    means = mixture_means(k, dim, 4.0)
    d = np.linalg.norm(means[:, None] - means[None], axis=2)
    assert d[~np.eye(k, dtype=bool)].min() >= 4.0 - 1e-9


def test_mixture_balanced_and_deterministic():
    a = make_gaussian_mixture(4, 2001, 2, 4.0, seed=3)
    counts = np.bincount(a.clean_labels, minlength=4)
    assert counts.max() - counts.min() <= 1
    b = make_gaussian_mixture(4, 2001, 2, 4.0, seed=3)
    np.testing.assert_array_equal(a.features, b.features)
    assert a.clean_mask.all()


def test_mixture_separable_limit_linear_classifier():
    ds = make_gaussian_mixture(4, 1000, 2, 1e4, seed=0)
    means = mixture_means(4, 2, 1e4)
    # nearest-mean rule is linear
    pred = np.argmin(((ds.features[:, None] - means[None]) ** 2).sum(axis=2), axis=1)
    assert np.all(pred == ds.clean_labels)


def _idx_bytes(magic_low, dims, payload):
    return struct.pack(">HBB", 0, 0x08, magic_low) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


def test_idx_fixture_exact_pixels(tmp_path):
    pixels = [0, 255, 128, 1, 2, 3, 4, 5]  # two 2x2 images
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(bytes([0, 0, 8, 3]) + struct.pack(">III", 2, 2, 2) + bytes(pixels))
    lab.write_bytes(bytes([0, 0, 8, 1]) + struct.pack(">I", 2) + bytes([7, 3]))
    ds = load_idx(img, lab)
    assert ds.features.shape == (2, 4)
    np.testing.assert_array_equal(ds.features * 255, np.array(pixels, dtype=float).reshape(2, 4))
    np.testing.assert_array_equal(ds.clean_labels, [7, 3])
    assert ds.k == 10


def test_idx_round_trip_bytes():
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    blob = write_idx(arr)
    assert blob[:4] == bytes([0, 0, 8, 3])
    np.testing.assert_array_equal(parse_idx(blob), arr)
    assert write_idx(parse_idx(blob)) == blob


def test_idx_wrong_magic(tmp_path):
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(write_idx(np.zeros((1, 2, 2))))
    lab.write_bytes(write_idx(np.zeros((1, 2, 2))))  # images magic where labels expected
    with pytest.raises(FormatError, match="expected magic 0x00000801, found 0x00000803"):
        load_idx(img, lab)


def test_idx_truncated_payload():
    blob = write_idx(np.zeros((3, 2), dtype=np.uint8))[:-2]
    with pytest.raises(FormatError) as err:
        parse_idx(blob)
    assert err.value.offset == len(blob)


def test_standardize_idempotent_and_constant_column():
    rng = np.random.default_rng(0)
    x = rng.normal(3, 2, size=(500, 3))
    x[:, 2] = 7.0
    ds = LabeledDataset.clean(x, np.zeros(500, dtype=int), 2)
    (once,) = standardize(ds)
    np.testing.assert_allclose(once.features[:, :2].mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(once.features[:, :2].std(axis=0), 1, atol=1e-12)
    assert np.all(once.features[:, 2] == 0)
    (twice,) = standardize(once)
    np.testing.assert_allclose(twice.features, once.features, atol=1e-9)


def test_standardize_uses_train_statistics_only():
    rng = np.random.default_rng(1)
    train = LabeledDataset.clean(rng.normal(0, 1, (400, 2)), np.zeros(400, dtype=int), 2)
    test = LabeledDataset.clean(rng.normal(5, 1, (400, 2)), np.zeros(400, dtype=int), 2)
    _, t = standardize(train, test)
    assert np.all(np.abs(t.features.mean(axis=0)) > 1)


def test_split_train_val():
    ds = make_gaussian_mixture(4, 1000, 2, 4.0, seed=0)
    train, val = split_train_val(ds, 0.1, seed=5)
    assert (train.n, val.n) == (900, 100)
    rows = {tuple(r) for r in train.features} | {tuple(r) for r in val.features}
    assert len(rows) == 1000
    assert not ({tuple(r) for r in train.features} & {tuple(r) for r in val.features})
    train2, _ = split_train_val(ds, 0.1, seed=5)
    np.testing.assert_array_equal(train.features, train2.features)


def test_build_split_noisy_val_clean_test():
    full = make_gaussian_mixture(4, 3000, 2, 4.0, seed=0)
    pool, test = full.subset(np.arange(2000)), full.subset(np.arange(2000, 3000))
    split = build_split(pool, test, NoiseSpec("sym", 0.4, 1), 0.1, 0)
    assert split.test.clean_mask.all()
    assert not split.val.clean_mask.all()
    assert split.val.n == 200 and split.train.n == 1800


def test_dataset_csv_header():
    ds = make_gaussian_mixture(2, 4, 3, 2.0, seed=0)
    lines = dataset_csv(ds).splitlines()
    assert lines[0] == "x0,x1,x2,clean_label,noisy_label"
    assert len(lines) == 5
