from .losses import (
    AE_ALPHA_RANGE,
    AE_NORM_WEIGHT,
    AE_SMOOTH_WEIGHT,
    ae_loss,
    flow_loss,
    trajectory_flow_loss,
)
from .models import (
    ConditionEncoder,
    LatentFlow,
    TrajectoryAutoencoder,
    TrajectoryFlow,
    encode_dataset,
)
from .presets import PAPER, PRESETS, TOY, PriorPreset, get_preset
from .sampling import (
    HEUN_STEPS,
    heun_integrate,
    heun_sample,
    heun_sample_cached,
    synthesize,
    trajectory_flow_sample,
)
from .training import (
    save_history_csv,
    train_ae,
    train_flow,
    train_trajectory_flow,
)

__all__ = [
    "AE_ALPHA_RANGE", "AE_NORM_WEIGHT", "AE_SMOOTH_WEIGHT", "HEUN_STEPS",
    "PAPER", "PRESETS", "TOY", "ConditionEncoder", "LatentFlow", "PriorPreset",
    "TrajectoryAutoencoder", "TrajectoryFlow", "ae_loss", "encode_dataset",
    "flow_loss", "get_preset", "heun_integrate", "heun_sample",
    "save_history_csv", "synthesize", "train_ae", "train_flow",
    "train_trajectory_flow", "trajectory_flow_loss", "trajectory_flow_sample",
]
