import numpy as np
import pytest
from numpy.testing import assert_array_equal

from h2t.core.errors import FormatError, ValidationError
from h2t.data.longtail import (ClassCounts, DatasetBundle, SplitTag, load_dataset, longtail_counts,
                               partition_splits, save_dataset, synth_gaussian_longtail)


def test_default_profile():
    counts = longtail_counts(500, 100, 20)
    assert counts.counts[0] == 500
    assert counts.counts[-1] == 5
    assert counts.imbalance_ratio == pytest.approx(100)
    assert all(a >= b for a, b in zip(counts.counts, counts.counts[1:]))


def test_balanced_profile():
    assert longtail_counts(50, 1, 5).counts == (50,) * 5


def test_small_profile(small_counts):
    assert small_counts.counts == (60, 37, 23, 15, 9, 6)
    assert small_counts.total == 150


@pytest.mark.parametrize("n_max, rho, classes", [(100, 0.5, 5), (10, 20, 5), (100, 10, 1)])
def test_invalid_profiles(n_max, rho, classes):
    with pytest.raises(ValidationError):
        longtail_counts(n_max, rho, classes)


def test_counts_must_be_non_increasing():
    with pytest.raises(ValidationError):
        ClassCounts((3, 5))
    with pytest.raises(ValidationError):
        ClassCounts((3, 0))


def test_synthetic_data_matches_counts(small_data, small_counts):
    assert_array_equal(np.bincount(small_data.labels), small_counts.as_array())
    assert small_data.features.shape == (150, 4)
    assert small_data.features.dtype == np.float32
    assert small_data.test is not None
    assert_array_equal(np.bincount(small_data.test.labels), [10] * 6)


def test_class_means_lie_on_the_separation_sphere(small_data):
    means = np.asarray(small_data.metadata["means"])
    np.testing.assert_allclose(np.linalg.norm(means, axis=1), 4.0)


def test_generation_is_deterministic(small_counts):
    a = synth_gaussian_longtail(small_counts, 4, 4.0, seed=3)
    b = synth_gaussian_longtail(small_counts, 4, 4.0, seed=3)
    c = synth_gaussian_longtail(small_counts, 4, 4.0, seed=4)
    assert_array_equal(a.features, b.features)
    assert not np.array_equal(a.features, c.features)


def test_class_indices_partition_the_dataset(small_data):
    indices = small_data.class_indices()
    assert [len(i) for i in indices] == [60, 37, 23, 15, 9, 6]
    for label, members in enumerate(indices):
        assert (small_data.labels[members] == label).all()


def test_bundle_rejects_mismatched_labels(small_counts):
    with pytest.raises(ValidationError):
        DatasetBundle(np.zeros((150, 2)), np.zeros(150, dtype=np.int64), small_counts)


def test_partition_thresholds(small_counts, small_partition):
    assert small_partition.assignment == (SplitTag.HEAD, SplitTag.HEAD, SplitTag.MEDIUM,
                                          SplitTag.MEDIUM, SplitTag.TAIL, SplitTag.TAIL)
    assert_array_equal(small_partition.members(SplitTag.TAIL), [4, 5])


def test_default_partition_boundaries():
    counts = ClassCounts((101, 100, 21, 20))
    tags = partition_splits(counts).assignment
    assert tags == (SplitTag.HEAD, SplitTag.MEDIUM, SplitTag.MEDIUM, SplitTag.TAIL)


def test_invalid_thresholds(small_counts):
    with pytest.raises(ValidationError):
        partition_splits(small_counts, head_threshold=10, tail_threshold=10)


def test_dataset_file_round_trip(tmp_path, small_data):
    path = save_dataset(tmp_path / "data.h2t", small_data)
    assert (tmp_path / "data.h2t.json").exists()
    loaded = load_dataset(path)
    assert_array_equal(loaded.features, small_data.features)
    assert_array_equal(loaded.labels, small_data.labels)
    assert loaded.counts == small_data.counts
    assert_array_equal(loaded.test.labels, small_data.test.labels)


def test_missing_sidecar(tmp_path, small_data):
    path = save_dataset(tmp_path / "data.h2t", small_data)
    (tmp_path / "data.h2t.json").unlink()
    with pytest.raises(FormatError):
        load_dataset(path)


def test_random_profiles_are_monotone_with_bounded_ratio():
    rng = np.random.default_rng(7)
    for _ in range(500):
        n_max = int(rng.integers(2, 2001))
        classes = int(rng.integers(2, 51))
        rho = float(rng.uniform(1.0, n_max))
        counts = longtail_counts(n_max, rho, classes).counts
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert counts[0] == n_max and counts[-1] >= 1
        # floor slack on the recomputed imbalance ratio
        slack = 2 / counts[-1]
        assert rho * (1 - slack) <= counts[0] / counts[-1] <= rho * (1 + slack)
