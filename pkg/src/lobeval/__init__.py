"""Distributional benchmark for generative limit order book models.

Compares real and model-generated LOBSTER message/orderbook streams by
the distributions of microstructure scores (spread, volumes, arrival
times, order flow imbalance, ...), price-impact response functions and
an adversarial discriminator, with bootstrap uncertainty throughout.
"""

from .adversarial import DiscriminatorConfig, roc_auc, train
from .divergence import (aggregate, bin_ablation, bootstrap_ci, compare,
                         conditional_divergence, fd_bin_edges,
                         horizon_divergence, l1_distance,
                         real_real_threshold, wasserstein1)
from .errors import (ConfigError, DataError, InconsistencyError, LobEvalError,
                     ParseError, TrainingError, ValidationError)
from .generator import (RateProfile, SimConfig, default_profile,
                        estimate_rates, perturb, simulate)
from .impact import delta_r, lag_grid, response_curves
from .lobster import (DatasetBundle, Role, SequencePair, load_bundle,
                      parse_book_file, parse_message_file, write_pair_files)
from .report import BenchmarkReport, RunConfig, emit, run
from .scores import (DEFAULT_SCORE_NAMES, ScoreSpec, align_series,
                     compute_score)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkReport", "ConfigError", "DataError", "DatasetBundle",
    "DiscriminatorConfig", "InconsistencyError", "LobEvalError",
    "ParseError", "RateProfile", "Role", "RunConfig", "ScoreSpec",
    "SequencePair", "SimConfig", "TrainingError", "ValidationError",
    "aggregate", "align_series", "bin_ablation", "bootstrap_ci", "compare",
    "compute_score", "conditional_divergence", "default_profile", "delta_r",
    "emit", "estimate_rates", "fd_bin_edges", "horizon_divergence",
    "l1_distance", "lag_grid", "load_bundle", "parse_book_file",
    "parse_message_file", "perturb", "real_real_threshold",
    "response_curves", "roc_auc", "run", "simulate", "train",
    "wasserstein1", "write_pair_files", "DEFAULT_SCORE_NAMES",
]
