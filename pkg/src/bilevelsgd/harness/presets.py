"""Preset experiment grids reproducing the desk-scale studies.

Every preset expands deterministically into named cells; paired sgd/bilevel
cells share their seed (hence dataset, noise mask, initialization, and
learning-rate schedule) so comparisons are like for like.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigurationError
from .config import DataConfig, ModelConfig, OptimizerConfig, RunConfig
from .metrics import emit_metrics
from .training import RunResult, run_training

PRESET_NAMES = (
    "noise-sweep",
    "k-sweep",
    "batch-size-sweep",
    "mu-sweep",
    "validation-ratio-sweep",
    "pixel-perm",
    "ablation-grid",
)

K_SWEEP_VALUES = (2, 4, 8, 16, 32)
NOISE_SWEEP_VALUES = tuple(round(0.1 * i, 1) for i in range(10))
BATCH_SIZE_SWEEP_VALUES = (16, 25, 50, 100)
MU_SWEEP_VALUES = (0.0001, 0.001, 0.01, 0.1, 1.0)
VALIDATION_RATIO_SWEEP_VALUES = (0.0, 0.05, 0.1, 0.2, 0.5)


@dataclass
class PresetCell:
    name: str
    config: RunConfig
    axis_value: float | None = None


@dataclass
class ExperimentPreset:
    name: str
    axis_label: str
    cells: list[PresetCell]


def desk_config(train_path: str, test_path: str, seed: int,
                kind: str = "bilevel", epochs: int = 30) -> RunConfig:
    """The desk baseline: image task, 2-layer MLP, stock optimizer defaults."""
    return RunConfig(
        data=DataConfig(path=train_path, format="idx", test_path=test_path),
        model=ModelConfig(arch="mlp", hidden=[256]),
        optimizer=OptimizerConfig(kind=kind),
        epochs=epochs,
        seed=seed,
    )


def expand_preset(name: str, train_path: str, test_path: str,
                  base_seed: int = 0, epochs: int | None = None) -> ExperimentPreset:
    if name not in PRESET_NAMES:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")

    def base(seed, kind="bilevel", n_epochs=30):
        return desk_config(train_path, test_path, seed, kind,
                           epochs if epochs is not None else n_epochs)

    cells: list[PresetCell] = []
    if name == "noise-sweep":
        for i, pi in enumerate(NOISE_SWEEP_VALUES):
            for kind in ("sgd", "bilevel"):
                cfg = base(base_seed + i, kind)
                cfg.data.noise_level = pi
                cells.append(PresetCell(f"pi{int(pi * 10):02d}_{kind}", cfg, pi))
        axis = "noise level"
    elif name == "k-sweep":
        for i, k in enumerate(K_SWEEP_VALUES):
            cfg = base(base_seed + i, n_epochs=15)
            cfg.data.noise_level = 0.5
            cfg.optimizer.k = k
            cells.append(PresetCell(f"k{k:02d}_bilevel", cfg, float(k)))
        axis = "compared mini-batches k"
    elif name == "batch-size-sweep":
        for i, b in enumerate(BATCH_SIZE_SWEEP_VALUES):
            cfg = base(base_seed + i, n_epochs=15)
            cfg.data.noise_level = 0.5
            cfg.optimizer.batch_size = b
            cells.append(PresetCell(f"b{b:03d}_bilevel", cfg, float(b)))
        axis = "batch size"
    elif name == "mu-sweep":
        for i, mu in enumerate(MU_SWEEP_VALUES):
            cfg = base(base_seed + i, n_epochs=15)
            cfg.data.noise_level = 0.5
            cfg.optimizer.mu_hat = mu
            cells.append(PresetCell(f"mu{i}_{mu:g}_bilevel", cfg, mu))
        axis = "mu_hat"
    elif name == "validation-ratio-sweep":
        for i, ratio in enumerate(VALIDATION_RATIO_SWEEP_VALUES):
            cfg = base(base_seed + i, n_epochs=15)
            cfg.data.noise_level = 0.5
            cfg.data.validation_ratio = ratio
            cells.append(PresetCell(f"vr{int(ratio * 100):02d}_bilevel", cfg, ratio))
        axis = "validation ratio"
    elif name == "pixel-perm":
        for i in range(3):
            for kind in ("sgd", "bilevel"):
                cfg = base(base_seed + i, kind)
                cfg.data.noise_level = 0.5
                cfg.data.permute_pixels = True
                cells.append(PresetCell(f"seed{i}_{kind}", cfg, float(i)))
        axis = "seed"
    else:  # ablation-grid: the four weighting variants against the baseline
        variants = [
            ("baseline", {}),
            ("a_no_l1", {"use_l1": False}),
            ("b_per_layer", {"per_layer_weights": True}),
            ("c_free_sampling", {"stratified": False}),
            ("d_independent_dropout", {"shared_dropout_mask": False}),
        ]
        for i, (cell_name, delta) in enumerate(variants):
            cfg = base(base_seed, n_epochs=3)
            cfg.data.noise_level = 0.5
            cfg.optimizer.batch_size = 16
            cfg.model.dropout_keep = 0.8
            for key, value in delta.items():
                if hasattr(cfg.optimizer, key):
                    setattr(cfg.optimizer, key, value)
                else:
                    setattr(cfg.model, key, value)
            cells.append(PresetCell(cell_name, cfg, float(i)))
        axis = "variant"
    for cell in cells:
        cell.config.validate()
    return ExperimentPreset(name, axis, cells)


def run_preset(preset: ExperimentPreset, out_dir, figures: bool = True,
               clock=time.perf_counter, log=print) -> list[tuple[PresetCell, RunResult]]:
    """Run every cell, writing <cell>.csv, <cell>.meta.json, figures, and a
    summary.csv with the final-epoch numbers per cell."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for cell in preset.cells:
        log(f"[{preset.name}] running {cell.name} "
            f"(optimizer={cell.config.optimizer.kind}, seed={cell.config.seed})")
        result = run_training(copy.deepcopy(cell.config), clock=clock)
        emit_metrics(result.rows, out_dir / f"{cell.name}.csv")
        meta = dict(result.metadata)
        meta["cell"] = cell.name
        meta["preset"] = preset.name
        meta["axis_value"] = cell.axis_value
        (out_dir / f"{cell.name}.meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n"
        )
        results.append((cell, result))
    _write_summary(preset, results, out_dir / "summary.csv")
    if figures:
        from . import report

        for cell, result in results:
            report.save_run_curves(
                result.rows, f"{preset.name}: {cell.name}", out_dir / f"{cell.name}.png"
            )
        report.save_preset_summary(preset, results, out_dir / "summary.png")
    return results


def _write_summary(preset, results, path) -> None:
    with Path(path).open("w") as fh:
        fh.write(
            "cell,optimizer,axis_value,epochs,final_train_accuracy,"
            "final_test_accuracy,final_gap,degenerate_steps,low_weight_steps\n"
        )
        for cell, result in results:
            last = result.rows[-1] if result.rows else None
            fh.write(
                ",".join(
                    [
                        cell.name,
                        cell.config.optimizer.kind,
                        "" if cell.axis_value is None else f"{cell.axis_value:g}",
                        str(cell.config.epochs),
                        "" if last is None else f"{last.train_accuracy:.6f}",
                        "" if last is None else f"{last.test_accuracy:.6f}",
                        "" if last is None else f"{last.generalization_gap:.6f}",
                        str(result.metadata["degenerate_steps"]),
                        str(result.metadata["low_weight_steps"]),
                    ]
                )
                + "\n"
            )
