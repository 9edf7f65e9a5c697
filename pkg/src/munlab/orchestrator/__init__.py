"""Training orchestration: config, loops, evaluation, persistence, CLI."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, parse_config, resolve_config, write_config
from .evaluation import (
    ModelErrorReport,
    NavigationReport,
    build_probe,
    evaluate_success,
    model_error_report,
    navigation_matrix,
    report_to_csv,
)
from .training import (
    MetricsRecord,
    TrainState,
    build_train_state,
    metrics_to_csv,
    run_env_goal_episode,
    run_mun_episode,
    run_training,
)

__all__ = [
    "ExperimentConfig",
    "MetricsRecord",
    "ModelErrorReport",
    "NavigationReport",
    "TrainState",
    "build_probe",
    "build_train_state",
    "evaluate_success",
    "load_checkpoint",
    "metrics_to_csv",
    "model_error_report",
    "navigation_matrix",
    "parse_config",
    "report_to_csv",
    "resolve_config",
    "run_env_goal_episode",
    "run_mun_episode",
    "run_training",
    "save_checkpoint",
    "write_config",
]
