import numpy as np
import pytest

from bilevelsgd.data import (
    BatchGroupSampler,
    Dataset,
    compose_batch_group,
    split_validation_pool,
)
from bilevelsgd.errors import DataError


def balanced_dataset(per_class, classes, rng, split="train"):
    labels = np.repeat(np.arange(classes), per_class)
    return Dataset(rng.random((per_class * classes, 2)), labels, classes, split)


class TestStratifiedGroups:
    def test_two_class_group_has_two_of_each(self, rng):
        ds = balanced_dataset(20, 2, rng)
        group = compose_batch_group(ds, batch_size=4, k=2, rng=np.random.default_rng(0))
        assert len(group.batches) == 2
        for batch in group.batches:
            assert (batch.labels == 0).sum() == 2
            assert (batch.labels == 1).sum() == 2

    def test_all_groups_share_one_histogram(self, rng):
        ds = balanced_dataset(30, 3, rng)
        sampler = BatchGroupSampler(ds, 6, 3, np.random.default_rng(1))
        for group in sampler.epoch():
            assert group.label_histogram is not None
            for batch in group.batches:
                assert np.array_equal(batch.label_histogram(3), group.label_histogram)

    def test_batches_within_a_group_are_disjoint(self, rng):
        ds = balanced_dataset(40, 2, rng)
        group = compose_batch_group(ds, 8, 4, rng=np.random.default_rng(2))
        seen = np.concatenate([b.indices for b in group.batches])
        assert len(np.unique(seen)) == seen.size

    def test_epoch_uses_each_example_at_most_once(self, rng):
        # 64-example toy set: every index appears in at most one group position
        ds = balanced_dataset(16, 4, rng)
        sampler = BatchGroupSampler(ds, 8, 2, np.random.default_rng(3))
        seen = []
        for group in sampler.epoch():
            for batch in group.batches:
                seen.extend(batch.indices.tolist())
        assert len(seen) == len(set(seen))
        assert len(seen) == 64  # nothing dropped when sizes divide evenly

    def test_leftovers_are_dropped_not_recycled(self, rng):
        ds = balanced_dataset(10, 2, rng)  # 20 examples
        sampler = BatchGroupSampler(ds, 4, 2, np.random.default_rng(4))
        groups = list(sampler.epoch())
        assert len(groups) == 2  # 2 groups * 2 batches * 4 = 16 of 20 used
        used = sum(len(b) for g in groups for b in g.batches)
        assert used == 16

    def test_reproducible_under_fixed_seed(self, rng):
        ds = balanced_dataset(25, 4, rng)
        a = [
            [b.indices.tolist() for b in g.batches]
            for g in BatchGroupSampler(ds, 8, 2, np.random.default_rng(9)).epoch()
        ]
        b = [
            [b.indices.tolist() for b in g.batches]
            for g in BatchGroupSampler(ds, 8, 2, np.random.default_rng(9)).epoch()
        ]
        assert a == b

    def test_class_too_small_names_the_class(self, rng):
        labels = np.array([0] * 30 + [1] * 2)
        ds = Dataset(rng.random((32, 2)), labels, 2)
        with pytest.raises(DataError, match="class 0"):
            BatchGroupSampler(ds, 16, 4, np.random.default_rng(0))

    def test_undersized_minority_class_names_that_class(self, rng):
        # class 0 absent entirely; the rounding bump lands on class 1
        labels = np.array([1] * 12 + [2] * 36)
        ds = Dataset(rng.random((48, 2)), labels, 3)
        with pytest.raises(DataError, match="class 1"):
            BatchGroupSampler(ds, 4, 16, np.random.default_rng(0))

    def test_unbalanced_marginals_allocate_proportionally(self, rng):
        labels = np.array([0] * 60 + [1] * 30 + [2] * 10)
        ds = Dataset(rng.random((100, 2)), labels, 3)
        group = compose_batch_group(ds, 10, 2, rng=np.random.default_rng(5))
        assert group.label_histogram.tolist() == [6, 3, 1]


class TestValidationPool:
    def test_validation_batch_comes_from_the_pool(self, rng):
        full = balanced_dataset(30, 2, rng)
        train, pool = split_validation_pool(full, 0.2, np.random.default_rng(0))
        sampler = BatchGroupSampler(train, 4, 3, np.random.default_rng(1), validation_pool=pool)
        group = next(sampler.epoch())
        vb = group.validation_batch
        # pool indices address the pool dataset; values must match pool rows
        assert np.array_equal(vb.inputs, pool.inputs[vb.indices])
        for tb in group.training_batches:
            assert np.array_equal(tb.inputs, train.inputs[tb.indices])

    def test_pool_histogram_matches_training_batches(self, rng):
        full = balanced_dataset(40, 4, rng)
        train, pool = split_validation_pool(full, 0.25, np.random.default_rng(0))
        sampler = BatchGroupSampler(train, 8, 3, np.random.default_rng(1), validation_pool=pool)
        for group in sampler.epoch():
            hists = [b.label_histogram(4).tolist() for b in group.batches]
            assert all(h == hists[0] for h in hists)

    def test_empty_pool_falls_back_to_training_data(self, rng):
        full = balanced_dataset(20, 2, rng)
        train, pool = split_validation_pool(full, 0.0, np.random.default_rng(0))
        sampler = BatchGroupSampler(train, 4, 2, np.random.default_rng(1), validation_pool=pool)
        group = next(sampler.epoch())
        assert len(group.batches) == 2


class TestFreeSampling:
    def test_histograms_are_not_forced(self, rng):
        ds = balanced_dataset(50, 2, rng)
        sampler = BatchGroupSampler(ds, 10, 2, np.random.default_rng(3), stratified=False)
        hists = []
        for group in sampler.epoch():
            assert group.label_histogram is None
            hists.extend(tuple(b.label_histogram(2)) for b in group.batches)
        assert len(set(hists)) > 1  # at least two different compositions show up

    def test_examples_still_unique_within_epoch(self, rng):
        ds = balanced_dataset(32, 2, rng)
        sampler = BatchGroupSampler(ds, 8, 2, np.random.default_rng(3), stratified=False)
        seen = [
            i for g in sampler.epoch() for b in g.batches for i in b.indices.tolist()
        ]
        assert len(seen) == len(set(seen))
