import numpy as np
import pytest
from numpy.testing import assert_allclose

import oracles
from bilevelsgd.bilevel import (
    BilevelConfig,
    GradientSet,
    MomentumState,
    combine_gradients,
    compute_weights,
    momentum_step,
    sgd_baseline_step,
)
from bilevelsgd.errors import ConfigurationError, NumericError
from bilevelsgd.nn.network import ParamVector, Segment


def params_of(values):
    values = np.asarray(values, float)
    return ParamVector(values.copy(), [Segment("all", 0, values.size)])


class TestMomentumStep:
    def test_zero_momentum_is_a_plain_gradient_step(self):
        p = params_of([1.0, -2.0])
        g = np.array([0.5, 0.25])
        momentum_step(p, g, MomentumState.zeros(2, 0.0), 0.1)
        assert_allclose(p.values, [1.0 - 0.05, -2.0 - 0.025], rtol=0, atol=0)

    def test_zero_update_and_zero_velocity_change_nothing(self):
        p = params_of([3.0, 4.0])
        momentum_step(p, np.zeros(2), MomentumState.zeros(2, 0.9), 0.1)
        assert_allclose(p.values, [3.0, 4.0], rtol=0, atol=0)

    def test_two_steps_match_the_recurrence_oracle(self):
        p = params_of([1.0, -2.0])
        state = MomentumState.zeros(2, 0.9)
        g1 = np.array([0.5, 0.25])
        g2 = np.array([-0.1, 0.3])
        momentum_step(p, g1, state, 0.1)
        momentum_step(p, g2, state, 0.1)
        expected = oracles.momentum_recurrence(
            [1.0, -2.0], [[0.5, 0.25], [-0.1, 0.3]], 0.9, 0.1
        )
        # frozen from the oracle: [0.915, -2.0775]
        assert_allclose(expected, [0.915, -2.0775], rtol=1e-15)
        assert_allclose(p.values, expected, rtol=1e-15)

    def test_longer_run_matches_the_recurrence_oracle(self, rng):
        p0 = rng.standard_normal(5)
        grads = [rng.standard_normal(5) for _ in range(7)]
        p = params_of(p0)
        state = MomentumState.zeros(5, 0.8)
        for g in grads:
            momentum_step(p, g, state, 0.05)
        expected = oracles.momentum_recurrence(p0.tolist(), [g.tolist() for g in grads], 0.8, 0.05)
        assert_allclose(p.values, expected, rtol=1e-12)

    def test_non_finite_update_is_numeric_error_with_step_index(self):
        p = params_of([1.0])
        state = MomentumState.zeros(1, 0.9)
        momentum_step(p, np.array([1.0]), state, 0.1)
        with pytest.raises(NumericError, match="step 1"):
            momentum_step(p, np.array([np.nan]), state, 0.1)

    def test_non_positive_learning_rate_rejected(self):
        with pytest.raises(ConfigurationError):
            momentum_step(params_of([1.0]), np.zeros(1), MomentumState.zeros(1), 0.0)


class TestSgdBaseline:
    def test_identical_to_momentum_step(self, rng):
        g = rng.standard_normal(3)
        p1, p2 = params_of([1.0, 2.0, 3.0]), params_of([1.0, 2.0, 3.0])
        s1, s2 = MomentumState.zeros(3, 0.9), MomentumState.zeros(3, 0.9)
        sgd_baseline_step(p1, g, s1, 0.01)
        momentum_step(p2, g, s2, 0.01)
        assert np.array_equal(p1.values, p2.values)
        assert np.array_equal(s1.velocity, s2.velocity)

    def test_bilevel_reduces_to_sgd_when_validation_equals_training(self, rng):
        g = rng.standard_normal(4)
        gs = GradientSet(g, [g.copy()])
        wv = compute_weights(gs, BilevelConfig(lambda_hat=1.0, mu_hat=0.01))
        assert_allclose(wv.normalized, [1.0], atol=1e-15)
        p1, p2 = params_of(np.ones(4)), params_of(np.ones(4))
        s1, s2 = MomentumState.zeros(4, 0.9), MomentumState.zeros(4, 0.9)
        momentum_step(p1, combine_gradients(gs, wv), s1, 0.05)
        sgd_baseline_step(p2, g, s2, 0.05)
        assert_allclose(p1.values, p2.values, atol=1e-15)

    def test_per_epoch_decay_schedule(self):
        # the harness multiplies the base rate by 0.95 after every epoch
        base = 0.01
        rates = [base * 0.95**e for e in range(5)]
        for e, r in enumerate(rates):
            assert abs(r - base * 0.95**e) == 0.0
        assert rates[1] / rates[0] == pytest.approx(0.95)
