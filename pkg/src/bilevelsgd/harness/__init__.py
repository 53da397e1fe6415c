from .config import DataConfig, ModelConfig, OptimizerConfig, RunConfig, load_config
from .metrics import CSV_COLUMNS, MetricsRow, emit_metrics, read_metrics
from .presets import ExperimentPreset, PresetCell, expand_preset, run_preset
from .training import RunResult, build_model, evaluate, run_training

__all__ = [
    "CSV_COLUMNS",
    "DataConfig",
    "ExperimentPreset",
    "MetricsRow",
    "ModelConfig",
    "OptimizerConfig",
    "PresetCell",
    "RunConfig",
    "RunResult",
    "build_model",
    "emit_metrics",
    "evaluate",
    "expand_preset",
    "load_config",
    "read_metrics",
    "run_preset",
    "run_training",
]
