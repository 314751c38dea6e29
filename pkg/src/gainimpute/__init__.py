"""Adversarial imputation of missing values in tabular data."""
from .data import Dataset, load_csv, normalize, introduce_mcar
from .gain import GainModel, TrainConfig, TrainingDiverged, impute, train, load_model, save_model

__all__ = ["Dataset", "load_csv", "normalize", "introduce_mcar", "GainModel", "TrainConfig", "TrainingDiverged",
           "impute", "train", "load_model", "save_model"]
__version__ = "0.1.0"
