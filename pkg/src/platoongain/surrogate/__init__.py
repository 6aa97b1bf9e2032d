"""Learned replacement for the per-instance gain optimization."""

from .dataset import (
    Dataset,
    IncompatibleRangesError,
    Sample,
    generate_dataset,
    sample_initial_conditions,
    split_indices,
)
from .mlp import (
    MlpModel,
    NormStats,
    TrainConfig,
    TrainingError,
    load_model,
    mlp_eval,
    mlp_forward,
    mlp_train,
    normalize,
    save_model,
)
