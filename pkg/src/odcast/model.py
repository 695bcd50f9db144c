"""The probabilistic O-D demand forecaster.

A forecaster owns an :class:`~odcast.layers.EncoderStack` plus a
probability head. A forward pass encodes a demand window [B, V, T]
through the spatial and temporal branches, fuses them with an
elementwise (Hadamard) product, splits the fused channels into one
block of width k_horizon per distribution parameter, and applies the
head's link functions. Training minimizes the mean negative log
likelihood with Adam, early-stopping on validation NLL.

Checkpoints are a small binary container (magic ``STZ1``): version,
a JSON config blob, then named float64 tensors. Round-trips are
bit-exact.
"""

from __future__ import annotations

import copy
import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .distributions import get_head
from .errors import (DataError, DomainError, FormatError, NumericError,
                     ShapeError)
from .graph import ODGraph, chebyshev_sequence
from .layers import EncoderStack

__all__ = [
    "ModelConfig",
    "Forecaster",
    "ForecastBundle",
    "EpochRecord",
    "Adam",
    "fuse",
    "split_indices",
    "window_starts",
    "train",
    "save_model",
    "load_model",
    "CHECKPOINT_MAGIC",
]

CHECKPOINT_MAGIC = b"STZ1"
CHECKPOINT_VERSION = 1

# Quantile levels of the prediction interval reported in bundles.
INTERVAL_LOW = 0.1
INTERVAL_HIGH = 0.9


@dataclass
class ModelConfig:
    """Everything that determines a training run."""

    head: str = "zinb"
    t_window: int = 8
    k_horizon: int = 3
    diffusion_order: int = 3
    hidden_widths: tuple = (32, 32)
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    paper_approx_ll: bool = False
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2

    def __post_init__(self):
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)
        get_head(self.head)
        if self.t_window < 1:
            raise ShapeError("t_window must be >= 1")
        if self.k_horizon < 1:
            raise ShapeError("k_horizon must be >= 1")
        if self.diffusion_order < 1:
            raise ShapeError("diffusion_order must be >= 1")
        if len(self.hidden_widths) != 2 or any(w < 1 for w in self.hidden_widths):
            raise ShapeError("hidden_widths must be two positive integers")
        if self.batch_size < 1:
            raise ShapeError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ShapeError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ShapeError("patience must be >= 1")
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise DomainError("split fractions must be positive and sum to 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def split_indices(num_steps: int, config: ModelConfig):
    """Chronological (train, val, test) index ranges over 0..num_steps."""
    n_train = int(np.floor(num_steps * config.train_fraction))
    n_val = int(np.floor(num_steps * config.val_fraction))
    return ((0, n_train), (n_train, n_train + n_val),
            (n_train + n_val, num_steps))


def window_starts(span, t_window: int, k_horizon: int) -> list[int]:
    """Stride-1 window start positions fully inside one split span."""
    lo, hi = span
    length = t_window + k_horizon
    return list(range(lo, hi - length + 1))


def fuse(h_s: ad.Tensor, h_t: ad.Tensor, num_blocks: int, block_width: int):
    """Hadamard-fuse the branches and split into parameter channels.

    Both inputs are [B, V, num_blocks * block_width]; returns a list of
    num_blocks tensors of shape [B, V, block_width].
    """
    if h_s.data.shape != h_t.data.shape:
        raise ShapeError("fusion branches must share a shape")
    if h_s.data.shape[-1] != num_blocks * block_width:
        raise ShapeError(f"fusion width {h_s.data.shape[-1]} != "
                         f"{num_blocks} * {block_width}")
    z = ad.mul(h_s, h_t)
    return [ad.slice_last(z, i * block_width, (i + 1) * block_width)
            for i in range(num_blocks)]


class Adam:
    """Adam with bias correction; updates arrays in place."""

    def __init__(self, params: dict, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        """grads: {name: array or None}; missing entries count as zero."""
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, arr in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(arr)
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            arr -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class ForecastBundle:
    """Per-node point estimates, interval bounds and, for the
    zero-inflated head, the zero probability."""

    head: str
    mean: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    pi: np.ndarray | None = None
    interval: tuple = (INTERVAL_LOW, INTERVAL_HIGH)


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    val_nll: float


class Forecaster:
    """Encoder stack + probability head bound to a model config."""

    def __init__(self, config: ModelConfig, stack: EncoderStack):
        self.config = config
        self.head = get_head(config.head)
        self.stack = stack

    @classmethod
    def initialized(cls, config: ModelConfig) -> "Forecaster":
        rng = np.random.default_rng(config.seed)
        head = get_head(config.head)
        out_width = head.num_params * config.k_horizon
        stack = EncoderStack.build(config.t_window, out_width,
                                   config.diffusion_order,
                                   config.hidden_widths, rng)
        return cls(config, stack)

    def parameters(self) -> dict:
        return self.stack.parameters()

    def _cheb(self, graph: ODGraph):
        order = self.config.diffusion_order
        cheb_f = chebyshev_sequence(graph.w_forward, order)
        cheb_b = chebyshev_sequence(graph.w_backward, order)
        return cheb_f, cheb_b

    def _forward_tensors(self, x: ad.Tensor, cheb_f, cheb_b, weights):
        """Window tensor -> linked distribution parameter tensors."""
        cfg = self.config
        if x.data.ndim != 3 or x.data.shape[2] != cfg.t_window:
            raise ShapeError(f"expected [B, V, {cfg.t_window}] input, "
                             f"got {x.data.shape}")
        h_s, h_t = self.stack.forward(x, cheb_f, cheb_b, weights)
        blocks = fuse(h_s, h_t, self.head.num_params, cfg.k_horizon)
        return self.head.link(blocks)

    def forward(self, windows: np.ndarray, graph: ODGraph):
        """Distribution parameters for a batch of windows, off-tape.

        Returns a tuple of float64 arrays, each [B, V, k_horizon],
        ordered as the head's param_names.
        """
        cheb_f, cheb_b = self._cheb(graph)
        weights = {n: ad.constant(a) for n, a in self.parameters().items()}
        params = self._forward_tensors(ad.constant(windows), cheb_f, cheb_b,
                                       weights)
        return tuple(p.data for p in params)

    def batch_nll(self, windows: np.ndarray, targets: np.ndarray,
                  graph: ODGraph) -> float:
        """Mean NLL of target counts under the forecast distribution."""
        cheb_f, cheb_b = self._cheb(graph)
        weights = {n: ad.constant(a) for n, a in self.parameters().items()}
        params = self._forward_tensors(ad.constant(windows), cheb_f, cheb_b,
                                       weights)
        return float(self.head.nll(targets, params,
                                   self.config.paper_approx_ll).data)

    def predict(self, history: np.ndarray, graph: ODGraph) -> ForecastBundle:
        """Forecast bundle for the k_horizon steps after a history
        window of shape [V, t_window]."""
        history = np.asarray(history, dtype=np.float64)
        if history.ndim != 2:
            raise ShapeError("history must be [nodes, t_window]")
        params = self.forward(history[None, :, :], graph)
        params = tuple(p[0] for p in params)
        head = self.head
        bundle = ForecastBundle(
            head=head.name,
            mean=np.asarray(head.mean(params), dtype=np.float64),
            median=np.asarray(head.median(params), dtype=np.float64),
            lower=np.asarray(head.quantile(INTERVAL_LOW, params), dtype=np.float64),
            upper=np.asarray(head.quantile(INTERVAL_HIGH, params), dtype=np.float64),
        )
        if head.name == "zinb":
            bundle.pi = params[0].copy()
        return bundle


def _epoch_batches(starts, batch_size, rng):
    order = np.array(starts)
    rng.shuffle(order)
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def _gather(demand, starts, t_window, k_horizon):
    """Stack windows: X [B, V, t_window], Y [B, V, k_horizon]."""
    xs = np.stack([demand[:, s:s + t_window] for s in starts])
    ys = np.stack([demand[:, s + t_window:s + t_window + k_horizon]
                   for s in starts])
    return xs, ys


def _split_nll(model, demand, starts, graph, batch_size) -> float:
    """Entry-weighted mean NLL over all windows of one split."""
    total, count = 0.0, 0
    for i in range(0, len(starts), batch_size):
        chunk = starts[i:i + batch_size]
        xs, ys = _gather(demand, chunk, model.config.t_window,
                         model.config.k_horizon)
        total += model.batch_nll(xs, ys, graph) * ys.size
        count += ys.size
    return total / count


def train(config: ModelConfig, demand: np.ndarray, graph: ODGraph):
    """Fit a forecaster on a [V, T] demand matrix.

    Chronological split per config fractions; windows never straddle a
    split boundary. Returns (model, [EpochRecord ...]); the model
    carries the weights of the best validation epoch.
    """
    demand = np.asarray(demand, dtype=np.float64)
    if demand.ndim != 2:
        raise ShapeError("demand must be [nodes, time]")
    if demand.shape[0] != graph.num_nodes:
        raise ShapeError(f"demand has {demand.shape[0]} nodes, graph has "
                         f"{graph.num_nodes}")
    if np.any(demand < 0) or not np.all(np.isfinite(demand)):
        raise DataError("demand counts must be finite and non-negative")

    train_span, val_span, _ = split_indices(demand.shape[1], config)
    train_starts = window_starts(train_span, config.t_window, config.k_horizon)
    val_starts = window_starts(val_span, config.t_window, config.k_horizon)
    if not train_starts:
        raise DataError("training split too short for one window")
    if not val_starts:
        raise DataError("validation split too short for one window")

    model = Forecaster.initialized(config)
    params = model.parameters()
    optimizer = Adam(params, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    cheb_f, cheb_b = model._cheb(graph)

    log: list[EpochRecord] = []
    best_val = np.inf
    best_weights = None
    since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        epoch_sum, epoch_entries = 0.0, 0
        for batch_idx, chunk in enumerate(
                _epoch_batches(train_starts, config.batch_size, rng)):
            xs, ys = _gather(demand, chunk, config.t_window, config.k_horizon)
            tape = ad.Tape()
            leaves = {name: tape.leaf(arr) for name, arr in params.items()}
            try:
                linked = model._forward_tensors(ad.constant(xs), cheb_f,
                                                cheb_b, leaves)
                loss = model.head.nll(ys, linked, config.paper_approx_ll)
            except NumericError as e:
                raise NumericError(f"epoch {epoch}, batch {batch_idx}: {e}") from e
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise NumericError(f"epoch {epoch}, batch {batch_idx}: "
                                   f"non-finite loss {loss_value}")
            grads = tape.backward(loss.node)
            optimizer.step({name: grads.get(leaf.node)
                            for name, leaf in leaves.items()})
            epoch_sum += loss_value * ys.size
            epoch_entries += ys.size

        val_nll = _split_nll(model, demand, val_starts, graph,
                             config.batch_size)
        log.append(EpochRecord(epoch, epoch_sum / epoch_entries, val_nll))

        if val_nll < best_val - 1e-12:
            best_val = val_nll
            best_weights = {k: v.copy() for k, v in params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    if best_weights is not None:
        for name, arr in params.items():
            arr[...] = best_weights[name]
    return model, log


# ---------------------------------------------------------------------------
# Checkpoint container


def _write_tensor(buf, name: str, arr: np.ndarray):
    encoded = name.encode("utf-8")
    buf.write(struct.pack("<H", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        buf.write(struct.pack("<Q", dim))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError("checkpoint truncated")
    return data


def _read_tensor(f):
    (name_len,) = struct.unpack("<H", _read_exact(f, 2))
    name = _read_exact(f, name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(f, 4))
    shape = tuple(struct.unpack("<Q", _read_exact(f, 8))[0] for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(f, count * 8), dtype="<f8")
    return name, data.reshape(shape).astype(np.float64)


def save_model(model: Forecaster, path):
    """Serialize config and weights; bit-exact on round-trip."""
    params = model.parameters()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    blob = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(params)))
    for name, arr in params.items():
        _write_tensor(buf, name, arr)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_model(path) -> Forecaster:
    """Rebuild a forecaster from a checkpoint file."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != CHECKPOINT_MAGIC:
            raise FormatError("not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<Q", _read_exact(f, 8))
        try:
            config = ModelConfig.from_dict(json.loads(_read_exact(f, blob_len)))
        except (json.JSONDecodeError, TypeError) as e:
            raise FormatError(f"bad config blob: {e}") from e
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors = dict(_read_tensor(f) for _ in range(count))

    model = Forecaster.initialized(config)
    params = model.parameters()
    if set(params) != set(tensors):
        raise FormatError("checkpoint weights do not match the architecture")
    for name, arr in params.items():
        if arr.shape != tensors[name].shape:
            raise FormatError(f"tensor '{name}' has shape "
                              f"{tensors[name].shape}, expected {arr.shape}")
        arr[...] = tensors[name]
    return model
