from .harness import (
    EpochRow,
    EvalResult,
    HarnessError,
    TrainResult,
    TrainRunConfig,
    build_model,
    evaluate_cnn,
    event_id_from_stem,
    history_to_csv,
    load_class_names,
    predictions_to_csv,
    scan_split,
    train_cnn,
)

__all__ = [
    "EpochRow",
    "EvalResult",
    "HarnessError",
    "TrainResult",
    "TrainRunConfig",
    "build_model",
    "evaluate_cnn",
    "event_id_from_stem",
    "history_to_csv",
    "load_class_names",
    "predictions_to_csv",
    "scan_split",
    "train_cnn",
]
