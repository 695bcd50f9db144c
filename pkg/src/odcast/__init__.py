"""Probabilistic origin-destination travel demand forecasting.

Sparse O-D trip counts are modeled per pair and horizon step with a
zero-inflated negative binomial (or NB / Gaussian / truncated normal)
distribution whose parameters come from a spatial diffusion-graph
branch fused with a temporal convolution branch. Everything trains
through a small reverse-mode autodiff engine over float64 arrays.

The usual entry points:

- :func:`build_od_graph` / :func:`ingest` / :func:`synth_generate`
  to obtain a graph and a demand tensor,
- :func:`train` and :class:`Forecaster` for fitting and forecasting,
- :func:`evaluate_model` and :func:`historical_average` for scoring,
- ``odcast`` (see :mod:`odcast.cli`) for batch jobs.
"""

from .autodiff import Tape, Tensor, backward, constant
from .data import (DatasetSplit, DemandTensor, SparsityReport, histogram_csv,
                   ingest, load_config, load_demand, load_zones,
                   parse_config_text, save_demand, sparsity_report, split,
                   synth_generate)
from .distributions import (HEADS, get_head, nb_log_pmf, zinb_log_pmf)
from .errors import (DataError, DomainError, FormatError, NumericError,
                     OdcastError, ShapeError)
from .graph import (ODGraph, Zone, ZoneTable, build_adjacency,
                    build_od_graph, chebyshev_sequence, diffusion_stationary,
                    haversine, transition_matrices)
from .layers import (DGCNLayer, EncoderStack, Projection, TCNLayer,
                     tcn_kernel_plan, xavier_uniform)
from .metrics import (MetricsReport, collect_forecasts, evaluate_model,
                      f1_weighted, ha_predict, historical_average,
                      kl_divergence, mae, mpiw, per_node_summary,
                      report_json, report_table, round_half_up,
                      true_zero_rate)
from .model import (Adam, EpochRecord, ForecastBundle, Forecaster,
                    ModelConfig, fuse, load_model, save_model,
                    split_indices, train, window_starts)
from .special import digamma, lgamma

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "backward", "constant",
    "DatasetSplit", "DemandTensor", "SparsityReport", "histogram_csv",
    "ingest", "load_config", "load_demand", "load_zones",
    "parse_config_text", "save_demand", "sparsity_report", "split",
    "synth_generate",
    "HEADS", "get_head", "nb_log_pmf", "zinb_log_pmf",
    "DataError", "DomainError", "FormatError", "NumericError",
    "OdcastError", "ShapeError",
    "ODGraph", "Zone", "ZoneTable", "build_adjacency", "build_od_graph",
    "chebyshev_sequence", "diffusion_stationary", "haversine",
    "transition_matrices",
    "DGCNLayer", "EncoderStack", "Projection", "TCNLayer",
    "tcn_kernel_plan", "xavier_uniform",
    "MetricsReport", "collect_forecasts", "evaluate_model", "f1_weighted",
    "ha_predict", "historical_average", "kl_divergence", "mae", "mpiw",
    "per_node_summary", "report_json", "report_table", "round_half_up",
    "true_zero_rate",
    "Adam", "EpochRecord", "ForecastBundle", "Forecaster", "ModelConfig",
    "fuse", "load_model", "save_model", "split_indices", "train",
    "window_starts",
    "digamma", "lgamma",
    "__version__",
]
