from .config import Config, ConfigError, load_config, parse_config
from .model import Checkpoint, DrivingModel
from .training import (NumericError, TrainLog, alignment_margin, evaluate_run, train, train_phase1, train_phase2,
                       token_accuracy)

__all__ = ["Config", "ConfigError", "load_config", "parse_config", "Checkpoint", "DrivingModel", "NumericError",
           "TrainLog", "alignment_margin", "evaluate_run", "train", "train_phase1", "train_phase2", "token_accuracy"]
