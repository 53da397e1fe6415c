"""Per-step mini-batch weighting from validation-gradient alignment.

One training step compares k mini-batch gradients: a single validation
gradient g_v and k-1 training gradients g_i. Each training batch gets a
scalar weight

    raw_i = (g_v . g_i) / (|g_i|^2 / lambda_hat + mu_hat)

which is L1-normalized so the weights act as batch-specific learning rates
that sum to one in absolute value. Batches whose gradient agrees with the
validation gradient are weighted up; orthogonal or opposing batches get
zero or negative weight. The weighted combination is then driven through a
classical momentum update.

`exact_weight_solve` solves the full stationarity system (with the Gram
matrix of training gradients) instead of its diagonal approximation; it is
kept as a verification oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InternalError, NumericError
from .nn.network import ParamVector, Segment

EXACT_SOLVE_MAX_BATCHES = 64


@dataclass
class GradientSet:
    """The k per-batch gradients of one step: one validation, k-1 training."""

    validation_grad: np.ndarray
    training_grads: list[np.ndarray]
    step_index: int = 0
    segments: list[Segment] | None = None

    def __post_init__(self) -> None:
        self.validation_grad = np.asarray(self.validation_grad, dtype=np.float64)
        self.training_grads = [np.asarray(g, dtype=np.float64) for g in self.training_grads]
        if not self.training_grads:
            raise InternalError("gradient set needs at least one training gradient")
        d = self.validation_grad.size
        if any(g.size != d for g in self.training_grads):
            raise InternalError("all gradients in a set must have equal length")


@dataclass
class WeightVector:
    """Raw and L1-normalized batch weights for one step (or one layer)."""

    raw: np.ndarray
    normalized: np.ndarray
    degenerate: bool


@dataclass
class BilevelConfig:
    epsilon: float = 0.01
    lambda_hat: float = 1.0
    mu_hat: float = 0.01
    k: int = 8
    use_l1: bool = True
    per_layer_weights: bool = False
    exact_solve: bool = False
    degeneracy_tolerance: float = 1e-12

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.epsilon}")
        if self.lambda_hat <= 0:
            raise ConfigurationError(f"lambda_hat must be positive, got {self.lambda_hat}")
        if self.mu_hat < 0:
            raise ConfigurationError(f"mu_hat must be non-negative, got {self.mu_hat}")
        if self.k < 2:
            raise ConfigurationError(f"need at least 2 compared mini-batches, got k={self.k}")


@dataclass
class MomentumState:
    velocity: np.ndarray
    momentum_coefficient: float = 0.9
    step_index: int = 0

    @classmethod
    def zeros(cls, dim: int, momentum_coefficient: float = 0.9) -> "MomentumState":
        if not 0.0 <= momentum_coefficient < 1.0:
            raise ConfigurationError(
                f"momentum coefficient must be in [0, 1), got {momentum_coefficient}"
            )
        return cls(np.zeros(dim), momentum_coefficient)


def _raw_weights(g_v, grads, lambda_hat, mu_hat):
    raw = np.empty(len(grads))
    for i, g in enumerate(grads):
        denom = (g @ g) / lambda_hat + mu_hat
        if denom == 0.0:
            raise ConfigurationError(
                f"zero weight denominator for batch {i}: gradient vanished and mu_hat == 0"
            )
        raw[i] = (g_v @ g) / denom
    return raw


def _normalize(raw, cfg: BilevelConfig) -> WeightVector:
    mass = np.abs(raw).sum()
    degenerate = bool(mass < cfg.degeneracy_tolerance)
    if degenerate or not cfg.use_l1:
        normalized = raw.copy()
    else:
        normalized = raw / mass
    return WeightVector(raw=raw, normalized=normalized, degenerate=degenerate)


def compute_weights(grads: GradientSet, cfg: BilevelConfig) -> WeightVector:
    """Diagonal-approximation weight rule with L1 normalization."""
    raw = _raw_weights(grads.validation_grad, grads.training_grads, cfg.lambda_hat, cfg.mu_hat)
    return _normalize(raw, cfg)


def compute_weights_per_layer(grads: GradientSet, cfg: BilevelConfig) -> list[WeightVector]:
    """The weight rule applied per layer segment, normalized within each layer."""
    if grads.segments is None:
        raise InternalError("per-layer weights need the gradients' segment index")
    out = []
    for seg in grads.segments:
        sl = slice(seg.offset, seg.offset + seg.length)
        raw = _raw_weights(
            grads.validation_grad[sl],
            [g[sl] for g in grads.training_grads],
            cfg.lambda_hat,
            cfg.mu_hat,
        )
        out.append(_normalize(raw, cfg))
    return out


def exact_weight_solve(grads: GradientSet, cfg: BilevelConfig) -> WeightVector:
    """Dense solve of the full stationarity system (K/lambda_hat + mu_hat*I) w = c.

    K is the Gram matrix of the training gradients and c_i = g_v . g_i.
    Verification oracle: with mutually orthogonal training gradients the
    off-diagonal of K vanishes and this equals compute_weights.
    """
    m = len(grads.training_grads)
    if m > EXACT_SOLVE_MAX_BATCHES:
        raise ConfigurationError(
            f"exact solve limited to {EXACT_SOLVE_MAX_BATCHES} training batches, got {m}"
        )
    g = np.stack(grads.training_grads)
    gram = g @ g.T
    c = g @ grads.validation_grad
    system = gram / cfg.lambda_hat + cfg.mu_hat * np.eye(m)
    try:
        raw = np.linalg.solve(system, c)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular weight system (mu_hat={cfg.mu_hat}): {exc}") from exc
    return _normalize(raw, cfg)


def combine_gradients(grads: GradientSet, weights) -> np.ndarray:
    """Weighted sum of the training gradients; zero where weights are degenerate.

    `weights` is one WeightVector, or the per-layer list produced by
    compute_weights_per_layer (combined segment by segment).
    """
    d = grads.validation_grad.size
    if isinstance(weights, WeightVector):
        return _combine_block(grads.training_grads, weights, d)
    if grads.segments is None or len(weights) != len(grads.segments):
        raise InternalError("per-layer weights do not match the gradients' segments")
    out = np.zeros(d)
    for seg, wv in zip(grads.segments, weights):
        sl = slice(seg.offset, seg.offset + seg.length)
        out[sl] = _combine_block([g[sl] for g in grads.training_grads], wv, seg.length)
    return out


def _combine_block(grads_block, wv: WeightVector, dim) -> np.ndarray:
    if len(wv.normalized) != len(grads_block):
        raise InternalError(
            f"{len(wv.normalized)} weights for {len(grads_block)} training gradients"
        )
    if wv.degenerate:
        return np.zeros(dim)
    out = np.zeros(dim)
    for w, g in zip(wv.normalized, grads_block):
        out += w * g
    return out


def momentum_step(
    params: ParamVector, update_grad: np.ndarray, state: MomentumState, epsilon: float
) -> ParamVector:
    """Classical momentum: v <- m*v + g; theta <- theta - epsilon*v. Mutates in place."""
    if epsilon <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {epsilon}")
    if update_grad.shape != state.velocity.shape or update_grad.size != params.dim:
        raise InternalError("update gradient length does not match parameters")
    if not np.all(np.isfinite(update_grad)):
        raise NumericError(f"non-finite update gradient at step {state.step_index}")
    state.velocity *= state.momentum_coefficient
    state.velocity += update_grad
    params.values -= epsilon * state.velocity
    state.step_index += 1
    return params


def sgd_baseline_step(
    params: ParamVector, grad: np.ndarray, state: MomentumState, epsilon: float
) -> ParamVector:
    """Plain SGD-with-momentum baseline; identical update path as momentum_step."""
    return momentum_step(params, grad, state, epsilon)
