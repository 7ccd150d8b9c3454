"""Adversarial time series for recurrent classifiers, guided by an extracted weighted automaton."""

from .attack import AdversarialBatch, AttackConfig, tsfool, tsfool_extended
from .data import Dataset, TimeSeries, load_dataset
from .iwfa import ExtractionConfig, IWfa, extract
from .metrics import AttackReport, build_report
from .rnn import LstmParams, TrainConfig, train

__all__ = [
    "AdversarialBatch", "AttackConfig", "AttackReport", "Dataset", "ExtractionConfig", "IWfa",
    "LstmParams", "TimeSeries", "TrainConfig", "build_report", "extract", "load_dataset",
    "train", "tsfool", "tsfool_extended",
]
