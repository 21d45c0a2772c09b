"""Gaussian conditional random fields with jointly learned features for partially observed networks."""

__version__ = "0.1.0"

from .data import (FeatureMatrix, Mechanism, MissingnessSpec, Standardizer, TemporalDataset,
                   induce_missingness, load_dataset, save_dataset, temporal_split)
from .gcrf import GcrfParams, Potentials, fit_gcrf, log_likelihood, predict
from .optim import ConvergenceWarning, NumericalError
from .synth import GeneratorConfig, generate_network, sample_gcrf
from .dfl import DflArch, DflModel, DflOptions, dfl_predict, fit_dfl
from .baselines import BaselineSpec, Kind, fit_baseline, run_baseline
from .harness import EvalReport, SweepConfig, emit_report, r_squared, run_sweep

__all__ = [
    "FeatureMatrix", "Mechanism", "MissingnessSpec", "Standardizer", "TemporalDataset",
    "induce_missingness", "load_dataset", "save_dataset", "temporal_split",
    "GcrfParams", "Potentials", "fit_gcrf", "log_likelihood", "predict",
    "ConvergenceWarning", "NumericalError",
    "GeneratorConfig", "generate_network", "sample_gcrf",
    "DflArch", "DflModel", "DflOptions", "dfl_predict", "fit_dfl",
    "BaselineSpec", "Kind", "fit_baseline", "run_baseline",
    "EvalReport", "SweepConfig", "emit_report", "r_squared", "run_sweep",
]
