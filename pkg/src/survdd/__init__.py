"""Survival losses, shared-embedding networks and capacity sweeps for studying interpolation."""
from .datagen import (
    DiscretizedDataset,
    GenConfig,
    GroundTruth,
    IntervalDiscretizer,
    SurvivalData,
    discretize,
    generate_dataset,
)
from .estimator import SurvivalMLP
from .exceptions import (
    DomainError,
    GridError,
    InvalidConfigError,
    MarginError,
    NumericError,
    OutOfRegimeError,
    SeparabilityError,
    TailDefinitionError,
)
from .losses import LOSS_KINDS, LossReport, compute_loss, loss_infimum, risk_sets
from .net import MlpParams, TrainConfig, mlp_init, train
from .sweep import SweepConfig, aggregate, detect_threshold, run_sweep

__version__ = "0.1.0"
