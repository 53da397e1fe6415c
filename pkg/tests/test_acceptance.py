"""Acceptance gate: every criterion runs at its stated tolerance and prints
one PASS/FAIL line. Run with `pytest -v -s tests/test_acceptance.py`."""

import itertools
import time
from contextlib import contextmanager

import numpy as np
from numpy.testing import assert_allclose

import oracles
from test_nn_gradient import finite_difference_gradient, max_relative_error, random_tiny_network

from bilevelsgd import nn
from bilevelsgd.bilevel import (
    BilevelConfig,
    GradientSet,
    compute_weights,
    exact_weight_solve,
)
from bilevelsgd.data import (
    BatchGroupSampler,
    Dataset,
    NoiseSpec,
    inject_label_noise,
    load_dataset,
)
from bilevelsgd.harness.config import config_from_dict
from bilevelsgd.harness.metrics import read_metrics
from bilevelsgd.harness.presets import desk_config, expand_preset, run_preset
from bilevelsgd.harness.training import run_training


@contextmanager
def criterion(number, name, budget_seconds):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} ({name}): FAIL")
        raise
    elapsed = time.perf_counter() - start
    if elapsed > budget_seconds:
        print(f"ACCEPTANCE {number} ({name}): FAIL (runtime {elapsed:.1f}s > {budget_seconds}s)")
        raise AssertionError(f"criterion {number} exceeded its {budget_seconds}s budget")
    print(f"ACCEPTANCE {number} ({name}): PASS ({elapsed:.1f}s)")


def fake_clock():
    counter = itertools.count()
    return lambda: float(next(counter))


def desk_run(image_data, seed, kind, noise_level, permute=False, epochs=30):
    train, test = image_data
    cfg = desk_config(train, test, seed=seed, kind=kind, epochs=epochs)
    cfg.data.noise_level = noise_level
    cfg.data.permute_pixels = permute
    return run_training(cfg, clock=fake_clock())


def test_criterion_1_weight_rule_unit_suite():
    with criterion(1, "weight-rule unit suite", 5.0):
        cfg = BilevelConfig(lambda_hat=1.0, mu_hat=0.01)
        # self-alignment
        wv = compute_weights(
            GradientSet(np.array([1.0, 0.0]), [np.array([1.0, 0.0])]),
            BilevelConfig(lambda_hat=1.0, mu_hat=0.0),
        )
        assert_allclose(wv.raw, [1.0], atol=1e-9)
        assert_allclose(wv.normalized, [1.0], atol=1e-9)
        # two-gradient instance, frozen from the scalar oracle
        wv = compute_weights(
            GradientSet(np.array([1.0, 0.0]), [np.array([1.0, 0.0]), np.array([1.0, 1.0])]),
            cfg,
        )
        assert_allclose(wv.raw, [0.9900990099009901, 0.4975124378109453], atol=1e-9)
        assert_allclose(wv.normalized, [0.6655629139072848, 0.3344370860927153], atol=1e-9)
        oracle_raw, oracle_norm = oracles.weight_rule(
            [1.0, 0.0], [[1.0, 0.0], [1.0, 1.0]], 1.0, 0.01
        )
        assert_allclose(wv.raw, oracle_raw, atol=1e-9)
        assert_allclose(wv.normalized, oracle_norm, atol=1e-9)
        # opposing gradient
        wv = compute_weights(GradientSet(np.array([1.0, 0.0]), [np.array([-1.0, 0.0])]), cfg)
        assert_allclose(wv.raw, [-0.9900990099009901], atol=1e-9)
        assert_allclose(wv.normalized, [-1.0], atol=1e-9)

        # property suite on 1000 random gradient sets
        rng = np.random.default_rng(424242)
        for _ in range(1000):
            d = int(rng.integers(2, 24))
            m = int(rng.integers(1, 8))
            g_v = rng.standard_normal(d)
            grads = [rng.standard_normal(d) for _ in range(m)]
            wv = compute_weights(GradientSet(g_v, grads), cfg)
            if not wv.degenerate:
                assert abs(np.abs(wv.normalized).sum() - 1.0) <= 1e-12
            for i, g in enumerate(grads):
                assert np.sign(wv.raw[i]) == np.sign(g_v @ g)
                assert np.sign(wv.normalized[i]) == np.sign(wv.raw[i])


def test_criterion_2_oracle_equivalence():
    with criterion(2, "exact-solve oracle equivalence", 10.0):
        cfg = BilevelConfig(lambda_hat=1.0, mu_hat=0.01)
        rng = np.random.default_rng(31415)
        for _ in range(200):
            d = int(rng.integers(2, 65))
            m = int(rng.integers(1, min(8, d) + 1))
            q, _ = np.linalg.qr(rng.standard_normal((d, m)))
            grads = [q[:, i] * rng.uniform(0.1, 3.0) for i in range(m)]
            gs = GradientSet(rng.standard_normal(d), grads)
            approx = compute_weights(gs, cfg)
            exact = exact_weight_solve(gs, cfg)
            assert_allclose(exact.raw, approx.raw, atol=1e-10)
            assert_allclose(exact.normalized, approx.normalized, atol=1e-10)
        for _ in range(200):
            d = int(rng.integers(2, 65))
            m = int(rng.integers(1, 9))
            grads = [rng.standard_normal(d) / np.sqrt(d) for _ in range(m)]
            g_v = rng.standard_normal(d) / np.sqrt(d)
            wv = exact_weight_solve(GradientSet(g_v, grads), cfg)
            g = np.stack(grads)
            system = g @ g.T / cfg.lambda_hat + cfg.mu_hat * np.eye(m)
            assert np.linalg.norm(system @ wv.raw - g @ g_v) <= 1e-10


def test_criterion_3_gradient_correctness():
    with criterion(3, "gradient vs finite differences", 60.0):
        rng = np.random.default_rng(98765)
        for trial in range(20):
            net, shape = random_tiny_network(rng)
            x = rng.standard_normal((4,) + shape)
            y = rng.integers(0, net.class_count, size=4)
            dropout = nn.DropoutSpec(0.7, int(rng.integers(1 << 30))) if trial % 4 == 0 else None
            analytic = nn.batch_gradient(net, x, y, dropout)
            numeric = finite_difference_gradient(net, x, y, dropout, step=1e-4)
            assert max_relative_error(analytic, numeric) <= 1e-4


def test_criterion_4_reduction_to_sgd(moons_data):
    with criterion(4, "bilevel k=2 reduces to SGD over 50 steps", 30.0):
        train, test = moons_data
        base = {
            "data": {"path": train, "format": "csv", "test_path": test},
            "model": {"hidden": [16]},
            "epochs": 1,
            "seed": 11,
        }
        # 800 examples / batch 16 = 50 steps in one epoch
        sgd_cfg = config_from_dict({**base, "optimizer": {"kind": "sgd", "batch_size": 16}})
        blv_cfg = config_from_dict(
            {**base, "optimizer": {"kind": "bilevel", "batch_size": 16, "k": 2,
                                   "force_identical_batches": True}}
        )
        sgd = run_training(sgd_cfg, clock=fake_clock())
        blv = run_training(blv_cfg, clock=fake_clock())
        assert sgd.metadata["steps"] == 50
        assert blv.metadata["steps"] == 50
        diff = np.abs(sgd.model.params.values - blv.model.params.values)
        assert diff.max() <= 1e-10
        # intermediate trajectory points: 5 epochs x 10 steps of batch 80
        sgd_cfg = config_from_dict(
            {**base, "epochs": 5, "optimizer": {"kind": "sgd", "batch_size": 80}}
        )
        blv_cfg = config_from_dict(
            {**base, "epochs": 5,
             "optimizer": {"kind": "bilevel", "batch_size": 80, "k": 2,
                           "force_identical_batches": True}}
        )
        sgd = run_training(sgd_cfg, clock=fake_clock())
        blv = run_training(blv_cfg, clock=fake_clock())
        for ra, rb in zip(sgd.rows, blv.rows):
            assert ra.train_accuracy == rb.train_accuracy
            assert ra.test_accuracy == rb.test_accuracy
        assert np.abs(sgd.model.params.values - blv.model.params.values).max() <= 1e-10


def test_criterion_5_noisy_label_desk_experiment(image_data):
    with criterion(5, "noisy-label desk experiment", 600.0):
        gaps_sgd, gaps_blv = [], []
        for seed in (0, 1, 2):
            sgd = desk_run(image_data, seed, "sgd", noise_level=0.5)
            blv = desk_run(image_data, seed, "bilevel", noise_level=0.5)
            last_s, last_b = sgd.rows[-1], blv.rows[-1]
            assert last_b.test_accuracy >= last_s.test_accuracy, (
                f"seed {seed}: bilevel test {last_b.test_accuracy:.4f} "
                f"< sgd test {last_s.test_accuracy:.4f}"
            )
            gaps_sgd.append(last_s.generalization_gap)
            gaps_blv.append(last_b.generalization_gap)
        mean_sgd, mean_blv = np.mean(gaps_sgd), np.mean(gaps_blv)
        assert mean_sgd > 0, f"sgd gap {mean_sgd:.4f} not positive; task miscalibrated"
        reduction = (mean_sgd - mean_blv) / mean_sgd
        print(f"  gaps: sgd {mean_sgd:.4f} bilevel {mean_blv:.4f} reduction {reduction:.2f}")
        assert reduction >= 0.30


def test_criterion_6_pixel_permutation_desk_experiment(image_data):
    with criterion(6, "pixel-permutation desk experiment", 600.0):
        for seed in (0, 1, 2):
            sgd = desk_run(image_data, seed, "sgd", noise_level=0.5, permute=True)
            blv = desk_run(image_data, seed, "bilevel", noise_level=0.5, permute=True)
            gap_s = sgd.rows[-1].generalization_gap
            gap_b = blv.rows[-1].generalization_gap
            assert gap_s > 0, f"seed {seed}: sgd gap {gap_s:.4f} not positive"
            assert gap_b <= 0.5 * gap_s, (
                f"seed {seed}: bilevel gap {gap_b:.4f} > half of sgd gap {gap_s:.4f}"
            )


def test_criterion_7_clean_data_non_degradation(image_data):
    with criterion(7, "clean-data non-degradation", 600.0):
        tests_sgd, tests_blv = [], []
        for seed in (0, 1, 2):
            tests_sgd.append(desk_run(image_data, seed, "sgd", 0.0).rows[-1].test_accuracy)
            tests_blv.append(desk_run(image_data, seed, "bilevel", 0.0).rows[-1].test_accuracy)
        mean_s, mean_b = np.mean(tests_sgd), np.mean(tests_blv)
        print(f"  clean test accuracy: sgd {mean_s:.4f} bilevel {mean_b:.4f}")
        assert mean_b >= mean_s - 0.01


def test_criterion_8_data_layer_suite(tmp_path, rng):
    with criterion(8, "data-layer suite", 10.0):
        # noise-count exactness and never-self-relabel
        labels = np.repeat(np.arange(10), 1000)
        ds = Dataset(rng.random((10000, 4)), labels, 10)
        noisy, mask = inject_label_noise(ds, NoiseSpec(0.5, 10, seed=21))
        for c in range(10):
            assert mask[ds.labels == c].sum() == 500
        assert not (noisy.labels[mask] == ds.labels[mask]).any()
        assert (noisy.labels == ds.labels).mean() == 0.5
        # determinism of the noise mask
        noisy2, mask2 = inject_label_noise(ds, NoiseSpec(0.5, 10, seed=21))
        assert np.array_equal(noisy.labels, noisy2.labels)
        assert np.array_equal(mask, mask2)

        # histogram equality in every batch group
        sampler = BatchGroupSampler(noisy, 20, 4, np.random.default_rng(3))
        n_groups = 0
        for group in sampler.epoch():
            n_groups += 1
            hists = [b.label_histogram(10).tolist() for b in group.batches]
            assert all(h == group.label_histogram.tolist() for h in hists)
        assert n_groups == sampler.groups_per_epoch() > 0

        # byte-identical group sequence under a fixed seed
        seq = lambda: [  # noqa: E731
            [b.indices.tolist() for b in g.batches]
            for g in BatchGroupSampler(noisy, 20, 4, np.random.default_rng(9)).epoch()
        ]
        assert seq() == seq()

        # IDX/CSV roundtrip fixtures
        from bilevelsgd.harness.synth import write_idx_images, write_idx_labels

        images = (rng.random((6, 3, 3)) * 255).astype(np.uint8)
        idx_labels = np.array([0, 1, 2, 0, 1, 2], dtype=np.uint8)
        write_idx_images(tmp_path / "t-images-idx3-ubyte", images)
        write_idx_labels(tmp_path / "t-labels-idx1-ubyte", idx_labels)
        from_idx = load_dataset(tmp_path / "t", "idx")
        lines = ["label," + ",".join(f"p{i}" for i in range(9))]
        for img, lab in zip(images, idx_labels):
            lines.append(f"{lab}," + ",".join(str(int(v)) for v in img.ravel()))
        (tmp_path / "t.csv").write_text("\n".join(lines) + "\n")
        from_csv = load_dataset(tmp_path / "t.csv", "csv")
        assert np.array_equal(from_idx.inputs, from_csv.inputs)
        assert np.array_equal(from_idx.labels, from_csv.labels)


def test_criterion_9_ablation_grid_smoke(image_data, tmp_path):
    with criterion(9, "ablation-grid smoke", 300.0):
        train, test = image_data
        preset = expand_preset("ablation-grid", train, test, base_seed=0)
        results = run_preset(preset, tmp_path / "grid", figures=False, clock=fake_clock(),
                             log=lambda *_: None)
        by_name = {}
        for cell, result in results:
            rows = read_metrics(tmp_path / "grid" / f"{cell.name}.csv")
            assert len(rows) == 3
            for row in rows:
                assert np.isfinite(
                    [row.train_accuracy, row.test_accuracy, row.generalization_gap]
                ).all()
            by_name[cell.name] = result
        free = by_name["c_free_sampling"].metadata
        base = by_name["baseline"].metadata
        low_free = free["low_weight_steps"] + free["degenerate_steps"]
        low_base = base["low_weight_steps"] + base["degenerate_steps"]
        print(f"  low-coherence steps: free {low_free} vs stratified {low_base}")
        assert low_free > low_base
