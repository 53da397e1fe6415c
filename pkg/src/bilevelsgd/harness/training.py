"""The experiment driver: wires data sampling, the gradient engine, and the
mini-batch weighting into one reproducible training loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..bilevel import (
    BilevelConfig,
    GradientSet,
    MomentumState,
    combine_gradients,
    compute_weights,
    compute_weights_per_layer,
    exact_weight_solve,
    momentum_step,
    sgd_baseline_step,
)
from ..data import (
    BatchGroup,
    BatchGroupSampler,
    Dataset,
    MiniBatch,
    NoiseSpec,
    PixelPermutation,
    inject_label_noise,
    load_dataset,
    permute_pixels,
    split_validation_pool,
)
from ..errors import BilevelError, ConfigurationError
from .config import ModelConfig, RunConfig
from .metrics import MetricsRow

# stable stream ids for per-purpose RNGs derived from the run seed
_STREAMS = {"init": 0, "noise": 1, "permutation": 2, "sampler": 3, "dropout": 4, "split": 5}


def derived_rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAMS[stream]])


def build_model(cfg: ModelConfig, example_shape, class_count: int,
                rng: np.random.Generator) -> nn.Network:
    """The two reference architectures: a 2-layer MLP and a small 2-conv CNN.

    Both carry a single dropout layer before the final classifier; with
    dropout_keep == 1.0 it is inert.
    """
    if cfg.arch == "mlp":
        layers = [nn.Flatten()]
        for h in cfg.hidden:
            layers += [nn.Dense(int(h)), nn.Relu()]
        layers += [nn.Dropout(), nn.Dense(class_count)]
    else:  # desk-cnn
        layers = [
            nn.Conv2d(8, 5),
            nn.Relu(),
            nn.MaxPool2x2(),
            nn.Conv2d(16, 3),
            nn.Relu(),
            nn.MaxPool2x2(),
            nn.Flatten(),
            nn.Dense(int(cfg.hidden[0])),
            nn.Relu(),
            nn.Dropout(),
            nn.Dense(class_count),
        ]
    return nn.build_network(example_shape, layers, rng)


def evaluate(net: nn.Network, ds: Dataset, batch_size: int = 512) -> float:
    """Fraction of argmax-correct predictions, dropout disabled."""
    if net.class_count != ds.class_count:
        raise ConfigurationError(
            f"model has {net.class_count} classes, dataset has {ds.class_count}"
        )
    if len(ds) == 0:
        raise ConfigurationError("cannot evaluate on an empty dataset")
    correct = 0
    for start in range(0, len(ds), batch_size):
        chunk = slice(start, min(start + batch_size, len(ds)))
        scores = nn.forward(net, ds.inputs[chunk])
        correct += int((scores.argmax(axis=1) == ds.labels[chunk]).sum())
    return correct / len(ds)


@dataclass
class _StepTelemetry:
    steps: int = 0
    degenerate: int = 0
    low_weight: int = 0
    dispersions: list = field(default_factory=list)
    negative_fractions: list = field(default_factory=list)

    def record(self, weights, coherence: float, threshold: float) -> None:
        self.steps += 1
        if coherence < threshold:
            self.low_weight += 1
        vals = (
            np.concatenate([w.normalized for w in weights])
            if isinstance(weights, list)
            else weights.normalized
        )
        self.dispersions.append(float(np.std(np.abs(vals))))
        self.negative_fractions.append(float(np.mean(vals < 0)))

    def record_skip(self) -> None:
        self.steps += 1
        self.degenerate += 1

    def mean_dispersion(self) -> float:
        return float(np.mean(self.dispersions)) if self.dispersions else 0.0

    def mean_negative(self) -> float:
        return float(np.mean(self.negative_fractions)) if self.negative_fractions else 0.0


@dataclass
class RunResult:
    rows: list[MetricsRow]
    model: nn.Network
    metadata: dict


def _plain_batches(ds: Dataset, batch_size: int, rng: np.random.Generator):
    """Uniformly shuffled full-size batches; the trailing remainder is dropped."""
    order = rng.permutation(len(ds))
    for start in range(0, len(ds) - batch_size + 1, batch_size):
        yield MiniBatch.from_dataset(ds, order[start : start + batch_size])


def _prepare_data(cfg: RunConfig):
    train = load_dataset(cfg.data.path, cfg.data.format, split="train")
    test = load_dataset(
        cfg.data.test_path, cfg.data.format, class_count=train.class_count, split="test"
    )
    corrupted = np.zeros(len(train), dtype=bool)
    if cfg.data.noise_level > 0:
        noise_seed = int(derived_rng(cfg.seed, "noise").integers(2**31))
        train, corrupted = inject_label_noise(
            train, NoiseSpec(cfg.data.noise_level, train.class_count, noise_seed)
        )
    permutation = None
    if cfg.data.permute_pixels:
        pixel_count = int(np.prod(train.example_shape))
        perm_seed = int(derived_rng(cfg.seed, "permutation").integers(2**31))
        permutation = PixelPermutation.random(pixel_count, perm_seed)
        train = permute_pixels(train, permutation)
        test = permute_pixels(test, permutation)
    return train, test, corrupted, permutation


def run_training(cfg: RunConfig, clock=time.perf_counter) -> RunResult:
    """Train per the config and return per-epoch metrics plus the final model.

    `clock` exists so tests can inject a deterministic time source; every
    other emitted number is fully determined by (config, seed).
    """
    cfg.validate()
    opt = cfg.optimizer
    train, test, corrupted, permutation = _prepare_data(cfg)
    split_rng = derived_rng(cfg.seed, "split")
    train_split, pool = split_validation_pool(train, cfg.data.validation_ratio, split_rng)

    net = build_model(cfg.model, train.example_shape, train.class_count,
                      derived_rng(cfg.seed, "init"))
    state = MomentumState.zeros(net.params.dim, opt.momentum)
    bcfg = BilevelConfig(
        epsilon=opt.learning_rate,
        lambda_hat=opt.lambda_hat,
        mu_hat=opt.mu_hat,
        k=opt.k,
        use_l1=opt.use_l1,
        per_layer_weights=opt.per_layer_weights,
        exact_solve=opt.exact_solve,
    )
    sampler_rng = derived_rng(cfg.seed, "sampler")
    dropout_rng = derived_rng(cfg.seed, "dropout")

    rows: list[MetricsRow] = []
    telemetry_total = _StepTelemetry()
    step_index = 0
    for epoch in range(cfg.epochs):
        t0 = clock()
        lr = opt.learning_rate * opt.decay**epoch
        telemetry = _StepTelemetry()
        if opt.kind == "sgd":
            for batch in _plain_batches(train_split, opt.batch_size, sampler_rng):
                mask_seed = int(dropout_rng.integers(2**63))
                step_index = _sgd_step(net, state, batch, cfg, lr, mask_seed, step_index)
                telemetry.steps += 1
        elif opt.force_identical_batches:
            for batch in _plain_batches(train_split, opt.batch_size, sampler_rng):
                mask_seed = int(dropout_rng.integers(2**63))
                group = BatchGroup([batch, batch], validation_index=0)
                step_index = _bilevel_step(
                    net, state, group, cfg, bcfg, lr, [mask_seed, mask_seed],
                    step_index, telemetry,
                )
        else:
            sampler = BatchGroupSampler(
                train_split, opt.batch_size, opt.k, sampler_rng,
                validation_pool=pool if len(pool) else None,
                stratified=opt.stratified,
            )
            for group in sampler.epoch():
                if cfg.model.shared_dropout_mask:
                    mask_seeds = [int(dropout_rng.integers(2**63))] * opt.k
                else:
                    mask_seeds = [int(dropout_rng.integers(2**63)) for _ in range(opt.k)]
                step_index = _bilevel_step(
                    net, state, group, cfg, bcfg, lr, mask_seeds, step_index, telemetry,
                )
        train_acc = evaluate(net, train)
        test_acc = evaluate(net, test)
        rows.append(
            MetricsRow(
                epoch=epoch,
                train_accuracy=train_acc,
                test_accuracy=test_acc,
                generalization_gap=train_acc - test_acc,
                weight_dispersion=telemetry.mean_dispersion(),
                negative_weight_fraction=telemetry.mean_negative(),
                degenerate_step_fraction=(
                    telemetry.degenerate / telemetry.steps if telemetry.steps else 0.0
                ),
                wall_clock_seconds=clock() - t0,
                low_weight_step_fraction=(
                    telemetry.low_weight / telemetry.steps if telemetry.steps else 0.0
                ),
            )
        )
        telemetry_total.steps += telemetry.steps
        telemetry_total.degenerate += telemetry.degenerate
        telemetry_total.low_weight += telemetry.low_weight

    metadata = {
        "config": cfg.to_dict(),
        "param_count": net.params.dim,
        "corrupted_examples": int(corrupted.sum()),
        "pixel_permutation_seed": None if permutation is None else permutation.seed,
        "steps": telemetry_total.steps,
        "degenerate_steps": telemetry_total.degenerate,
        "low_weight_steps": telemetry_total.low_weight,
        "low_weight_threshold": opt.low_weight_threshold,
        "epochs": cfg.epochs,
    }
    return RunResult(rows, net, metadata)


def _dropout_spec(cfg: RunConfig, mask_seed: int):
    if cfg.model.dropout_keep >= 1.0:
        return None
    return nn.DropoutSpec(
        cfg.model.dropout_keep, mask_seed, cfg.model.shared_dropout_mask
    )


def _sgd_step(net, state, batch, cfg, lr, mask_seed, step_index) -> int:
    try:
        grad = nn.batch_gradient(
            net, batch.inputs, batch.labels, _dropout_spec(cfg, mask_seed)
        )
        sgd_baseline_step(net.params, grad, state, lr)
    except BilevelError as exc:
        raise type(exc)(f"step {step_index}: {exc}") from exc
    return step_index + 1


def _bilevel_step(net, state, group, cfg, bcfg, lr, mask_seeds, step_index, telemetry) -> int:
    try:
        grads = [
            nn.batch_gradient(net, b.inputs, b.labels, _dropout_spec(cfg, seed))
            for b, seed in zip(group.batches, mask_seeds)
        ]
        vi = group.validation_index
        gset = GradientSet(
            validation_grad=grads[vi],
            training_grads=[g for i, g in enumerate(grads) if i != vi],
            step_index=step_index,
            segments=net.params.segments,
        )
        if bcfg.per_layer_weights:
            weights = compute_weights_per_layer(gset, bcfg)
            degenerate = all(w.degenerate for w in weights)
            signed = sum(float(w.raw.sum()) for w in weights)
            mass = sum(float(np.abs(w.raw).sum()) for w in weights)
        else:
            solver = exact_weight_solve if bcfg.exact_solve else compute_weights
            weights = solver(gset, bcfg)
            degenerate = weights.degenerate
            signed = float(weights.raw.sum())
            mass = float(np.abs(weights.raw).sum())
        if degenerate:
            telemetry.record_skip()
            telemetry.low_weight += 1
        else:
            # coherence near 0 means the weights cancel each other on net,
            # the soft version of a degenerate (all-zero) step
            coherence = abs(signed) / mass
            telemetry.record(weights, coherence, cfg.optimizer.low_weight_threshold)
            momentum_step(net.params, combine_gradients(gset, weights), state, lr)
    except BilevelError as exc:
        raise type(exc)(f"step {step_index}: {exc}") from exc
    return step_index + 1
