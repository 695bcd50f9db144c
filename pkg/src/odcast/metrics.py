"""Evaluation metrics, the historical-average baseline, and reports.

Metrics follow sparse-demand conventions: besides MAE, intervals are
scored by mean prediction interval width (10%-90% quantiles), agreement
between count fields by a smoothed elementwise KL term with epsilon
1e-5, exact-zero behaviour by the true-zero rate (fraction of truly
zero entries predicted as exactly zero), and class agreement by
support-weighted F1 over the observed counts.

Point metrics are computed twice, once with mean and once with median
point estimates; continuous heads have their point estimates rounded
half-up first so every discrete metric sees integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError, ShapeError
from .model import Forecaster, split_indices, window_starts

__all__ = [
    "KL_EPS",
    "mae",
    "mpiw",
    "kl_divergence",
    "true_zero_rate",
    "f1_weighted",
    "round_half_up",
    "historical_average",
    "ha_predict",
    "MetricsReport",
    "report_json",
    "report_table",
    "collect_forecasts",
    "evaluate_model",
    "per_node_summary",
]

KL_EPS = 1e-5

F1_AVERAGING = "weighted"


def _paired(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ShapeError("empty arrays")
    return pred, truth


def mae(pred, truth) -> float:
    """Mean absolute error."""
    pred, truth = _paired(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def mpiw(lower, upper) -> float:
    """Mean prediction interval width."""
    lower, upper = _paired(lower, upper)
    if np.any(upper < lower):
        raise DataError("upper quantile below lower quantile")
    return float(np.mean(upper - lower))


def kl_divergence(pred, truth, eps: float = KL_EPS) -> float:
    """Smoothed elementwise KL term, averaged over entries:
    mean(pred * log((pred + eps) / (truth + eps)))."""
    pred, truth = _paired(pred, truth)
    if np.any(pred < 0) or np.any(truth < 0):
        raise DomainError("KL needs non-negative demand fields")
    return float(np.mean(pred * np.log((pred + eps) / (truth + eps))))


def true_zero_rate(pred, truth) -> float:
    """Fraction of truly zero entries predicted as exactly zero.

    Returns NaN when the truth contains no zeros.
    """
    pred, truth = _paired(pred, truth)
    zeros = truth == 0
    if not np.any(zeros):
        return math.nan
    return float(np.mean(pred[zeros] == 0))


def f1_weighted(pred, truth) -> float:
    """Support-weighted F1 over the count classes present in the truth.

    Classes appearing only in predictions carry zero support and do not
    contribute; a class with no true or predicted positives scores 0.
    """
    pred, truth = _paired(pred, truth)
    if np.any(pred != np.floor(pred)) or np.any(truth != np.floor(truth)):
        raise DataError("F1 needs integer class labels; round predictions first")
    classes, support = np.unique(truth, return_counts=True)
    total = truth.size
    score = 0.0
    for cls, sup in zip(classes, support):
        tp = float(np.sum((pred == cls) & (truth == cls)))
        fp = float(np.sum((pred == cls) & (truth != cls)))
        fn = float(sup) - tp
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom > 0 else 0.0
        score += (sup / total) * f1
    return float(score)


def round_half_up(x) -> np.ndarray:
    """Round with ties away from zero-half (0.5 -> 1), elementwise."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


# ---------------------------------------------------------------------------
# Historical average baseline


def historical_average(train: np.ndarray, train_slots: np.ndarray,
                       num_slots: int) -> np.ndarray:
    """Per-node mean demand for each daily slot.

    train: [V, T] counts; train_slots: length-T slot index per step.
    Slots never observed in training fall back to the node's overall
    training mean. Returns a [V, num_slots] table.
    """
    train = np.asarray(train, dtype=np.float64)
    train_slots = np.asarray(train_slots)
    if train.ndim != 2 or train_slots.shape != (train.shape[1],):
        raise ShapeError("expected train [V, T] and one slot per step")
    if num_slots < 1 or np.any(train_slots < 0) or np.any(train_slots >= num_slots):
        raise DataError("slot indices outside [0, num_slots)")
    table = np.empty((train.shape[0], num_slots))
    node_mean = train.mean(axis=1)
    for s in range(num_slots):
        mask = train_slots == s
        if np.any(mask):
            table[:, s] = train[:, mask].mean(axis=1)
        else:
            table[:, s] = node_mean
    return table


def ha_predict(table: np.ndarray, slots) -> np.ndarray:
    """Look up baseline forecasts: [V, len(slots)]."""
    slots = np.asarray(slots)
    if np.any(slots < 0) or np.any(slots >= table.shape[1]):
        raise DataError("slot index outside the table")
    return table[:, slots]


# ---------------------------------------------------------------------------
# Reports


@dataclass
class MetricsReport:
    """Dual-scored metric set; `mpiw` is point-estimate independent.

    f1_averaging records the averaging scheme and stays out of the
    machine-readable JSON, whose key set is fixed.
    """

    mae_mean: float
    mae_median: float
    mpiw: float
    kl_mean: float
    kl_median: float
    true_zero_rate_mean: float
    true_zero_rate_median: float
    f1_mean: float
    f1_median: float
    f1_averaging: str = F1_AVERAGING


_REPORT_FIELDS = ("mae_mean", "mae_median", "mpiw", "kl_mean", "kl_median",
                  "true_zero_rate_mean", "true_zero_rate_median",
                  "f1_mean", "f1_median")


def report_json(report: MetricsReport) -> dict:
    """Exactly the nine metric keys; NaN becomes null."""
    out = {}
    for name in _REPORT_FIELDS:
        value = getattr(report, name)
        out[name] = None if (isinstance(value, float) and math.isnan(value)) \
            else float(value)
    return out


def report_table(report: MetricsReport) -> str:
    """Aligned two-column text table."""
    rows = [("metric", "value")]
    for name in _REPORT_FIELDS:
        value = getattr(report, name)
        text = "n/a" if (isinstance(value, float) and math.isnan(value)) \
            else f"{value:.6f}"
        rows.append((name, text))
    width = max(len(r[0]) for r in rows)
    lines = [f"{name:<{width}}  {text}" for name, text in rows]
    lines.insert(1, "-" * (width + 2 + max(len(r[1]) for r in rows)))
    lines.append(f"(F1 averaging: {report.f1_averaging})")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Evaluation driver


def collect_forecasts(model: Forecaster, demand: np.ndarray, graph,
                      span) -> dict:
    """Forecasts for every window inside a split span.

    Returns arrays keyed mean/median/lower/upper/truth, each
    [num_windows, V, k_horizon]; point estimates of continuous heads
    are rounded half-up and projected onto the count domain (>= 0).
    Interval bounds stay raw distribution quantiles. Adds 'pi' for the
    zero-inflated head.
    """
    cfg = model.config
    starts = window_starts(span, cfg.t_window, cfg.k_horizon)
    if not starts:
        raise DataError("span too short for a single evaluation window")
    head = model.head
    out = {k: [] for k in ("mean", "median", "lower", "upper", "truth")}
    if head.name == "zinb":
        out["pi"] = []
    for i in range(0, len(starts), cfg.batch_size):
        chunk = starts[i:i + cfg.batch_size]
        xs = np.stack([demand[:, s:s + cfg.t_window] for s in chunk])
        ys = np.stack([demand[:, s + cfg.t_window:s + cfg.t_window + cfg.k_horizon]
                       for s in chunk])
        params = model.forward(xs, graph)
        mean = np.asarray(head.mean(params), dtype=np.float64)
        median = np.asarray(head.median(params), dtype=np.float64)
        if not head.discrete:
            mean = np.maximum(round_half_up(mean), 0.0)
            median = np.maximum(round_half_up(median), 0.0)
        out["mean"].append(mean)
        out["median"].append(median)
        out["lower"].append(np.asarray(head.quantile(0.1, params), dtype=np.float64))
        out["upper"].append(np.asarray(head.quantile(0.9, params), dtype=np.float64))
        out["truth"].append(ys)
        if head.name == "zinb":
            out["pi"].append(params[0])
    return {k: np.concatenate(v, axis=0) for k, v in out.items()}


def evaluate_model(model: Forecaster, demand: np.ndarray, graph,
                   span=None) -> MetricsReport:
    """Dual-scored report over a split span (default: the test split)."""
    demand = np.asarray(demand, dtype=np.float64)
    if span is None:
        span = split_indices(demand.shape[1], model.config)[2]
    f = collect_forecasts(model, demand, graph, span)
    truth = f["truth"]
    # discrete heads keep fractional expected values for MAE/KL; the
    # integer-typed metrics see them rounded half-up
    mean_int = round_half_up(f["mean"])
    median_int = round_half_up(f["median"])
    return MetricsReport(
        mae_mean=mae(f["mean"], truth),
        mae_median=mae(f["median"], truth),
        mpiw=mpiw(f["lower"], f["upper"]),
        kl_mean=kl_divergence(f["mean"], truth),
        kl_median=kl_divergence(f["median"], truth),
        true_zero_rate_mean=true_zero_rate(mean_int, truth),
        true_zero_rate_median=true_zero_rate(median_int, truth),
        f1_mean=f1_weighted(mean_int, truth),
        f1_median=f1_weighted(median_int, truth),
    )


def per_node_summary(forecasts: dict) -> tuple[np.ndarray, np.ndarray]:
    """Observed mean demand and mean interval width per node.

    Input is the collect_forecasts dict; nodes are axis 1. Feeds the
    demand-vs-uncertainty scatter export.
    """
    truth = forecasts["truth"]
    width = forecasts["upper"] - forecasts["lower"]
    return truth.mean(axis=(0, 2)), width.mean(axis=(0, 2))
