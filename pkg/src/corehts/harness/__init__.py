"""Training, experiment sweeps, checkpoints, and bound verification."""
from .bound import verify_bound
from .config import ConfigError, TrainConfig
from .experiments import DEFAULT_WEIGHTS, noisy_experiment, sweep_weights
from .training import RunReport, TrainingDiverged, train
