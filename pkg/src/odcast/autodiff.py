"""Reverse-mode automatic differentiation on a flat operation tape.

The engine is deliberately small: float64 ndarrays as storage, a
define-by-run :class:`Tape` holding an append-only list of recorded
operations, and one hand-written backward rule per operation. The tape
is rebuilt every training step.

Conventions enforced throughout:

* all values are float64; integers are promoted on entry;
* elementwise binary ops broadcast a scalar (size-1) operand against a
  tensor, nothing more general;
* every forward result is checked for NaN/Inf and failures raise
  :class:`~odcast.errors.NumericError` rather than propagating silently;
* ``relu`` uses derivative 0 at exactly 0.

Gradients are accumulated per node, so a value feeding several
operations receives the sum of its downstream contributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_ndtr as _sp_log_ndtr

from .errors import DomainError, NumericError, ShapeError
from .special import digamma as _digamma_kernel
from .special import lgamma as _lgamma_kernel

__all__ = [
    "Tensor",
    "Tape",
    "constant",
    "backward",
    "add",
    "sub",
    "mul",
    "sigmoid",
    "softplus",
    "exp",
    "log",
    "relu",
    "lgamma",
    "matmul",
    "conv1d",
    "node_mix",
    "width_mix",
    "add_row",
    "sum_all",
    "mean_all",
    "slice_last",
    "clip",
    "log_floored",
    "log_ndtr",
    "LOG_FLOOR",
]

# Floor applied by log_floored: the bottom of the representable
# exponent range, used to keep impossible-event log masses finite.
LOG_FLOOR = -745.0

_LOG_SQRT_2PI = 0.9189385332046727


@dataclass
class Node:
    """One recorded operation: kind, input node ids, saved values.

    ``inputs`` uses -1 for operands that are constants (not on the
    tape); ``saved`` holds whatever the backward rule needs.
    """

    op: str
    inputs: tuple
    saved: tuple
    shape: tuple


class Tensor:
    """A float64 ndarray, optionally linked to a node on a tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Optional[Tape]" = None, node: Optional[int] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        where = "const" if self.tape is None else f"node {self.node}"
        return f"Tensor(shape={self.data.shape}, {where})"

    # Arithmetic sugar; the free functions below are the primary API.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Append-only record of operations plus per-node gradient storage."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.gradients: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.nodes)

    def leaf(self, data) -> Tensor:
        """Register an independent variable (e.g. a weight matrix)."""
        t = Tensor(data)
        nid = self._record("leaf", (), (), t.data.shape)
        t.tape = self
        t.node = nid
        return t

    def _record(self, op: str, inputs: tuple, saved: tuple, shape: tuple) -> int:
        self.nodes.append(Node(op, inputs, saved, shape))
        return len(self.nodes) - 1

    def backward(self, seed: int) -> dict[int, np.ndarray]:
        """Accumulate gradients of a scalar seed node w.r.t. every ancestor.

        Returns {node id: gradient array}; the seed's own entry is the
        all-ones tensor of its shape. The result is also kept on
        ``self.gradients``.
        """
        if not 0 <= seed < len(self.nodes):
            raise ShapeError(f"seed node {seed} is not on this tape")
        seed_node = self.nodes[seed]
        if int(np.prod(seed_node.shape)) != 1:
            raise ShapeError(f"backward seed must be scalar, got shape {seed_node.shape}")

        grads: dict[int, np.ndarray] = {seed: np.ones(seed_node.shape)}
        for nid in range(seed, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.op == "leaf":
                continue
            contributions = _BACKWARD[node.op](node, g)
            for input_id, contrib in zip(node.inputs, contributions):
                if input_id < 0 or contrib is None:
                    continue
                if input_id in grads:
                    grads[input_id] = grads[input_id] + contrib
                else:
                    grads[input_id] = contrib
        self.gradients = grads
        return grads


def backward(tape: Tape, seed: int) -> dict[int, np.ndarray]:
    """Free-function form of :meth:`Tape.backward`."""
    return tape.backward(seed)


def constant(data) -> Tensor:
    """Wrap an array as an off-tape tensor."""
    return Tensor(data)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _find_tape(*tensors: Tensor) -> Optional[Tape]:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ShapeError("operands belong to different tapes")
    return tape


def _node_id(t: Tensor) -> int:
    return t.node if t.tape is not None else -1


def _check_finite(out: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite result in '{op}'")
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to a (possibly scalar) operand shape."""
    if grad.shape == shape:
        return grad
    if int(np.prod(shape)) == 1:
        return np.sum(grad).reshape(shape)
    raise ShapeError(f"cannot reduce gradient {grad.shape} to {shape}")


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(f"'{op}' needs equal shapes or a scalar operand, "
                     f"got {a.data.shape} and {b.data.shape}")


def _emit(tape: Optional[Tape], op: str, inputs: tuple, saved: tuple, out: np.ndarray) -> Tensor:
    if tape is None:
        return Tensor(out)
    nid = tape._record(op, inputs, saved, out.shape)
    return Tensor(out, tape, nid)


# ---------------------------------------------------------------------------
# Elementwise operations


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "add")
    out = _check_finite(a.data + b.data, "add")
    tape = _find_tape(a, b)
    return _emit(tape, "add", (_node_id(a), _node_id(b)),
                 (a.data.shape, b.data.shape), out)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "sub")
    out = _check_finite(a.data - b.data, "sub")
    tape = _find_tape(a, b)
    return _emit(tape, "sub", (_node_id(a), _node_id(b)),
                 (a.data.shape, b.data.shape), out)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "mul")
    out = _check_finite(a.data * b.data, "mul")
    tape = _find_tape(a, b)
    return _emit(tape, "mul", (_node_id(a), _node_id(b)),
                 (a.data, b.data), out)


def sigmoid(x) -> Tensor:
    x = _coerce(x)
    # Split by sign so exp never overflows.
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)
    _check_finite(out, "sigmoid")
    return _emit(x.tape, "sigmoid", (_node_id(x),), (out,), out)


def softplus(x) -> Tensor:
    x = _coerce(x)
    # log(1 + e^x) = max(x, 0) + log1p(e^-|x|), stable for large |x|.
    d = x.data
    out = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    _check_finite(out, "softplus")
    return _emit(x.tape, "softplus", (_node_id(x),), (d,), out)


def exp(x) -> Tensor:
    x = _coerce(x)
    with np.errstate(over="ignore"):
        out = _check_finite(np.exp(x.data), "exp")
    return _emit(x.tape, "exp", (_node_id(x),), (out,), out)


def log(x) -> Tensor:
    x = _coerce(x)
    if x.data.size and not np.all(x.data > 0.0):
        raise DomainError("log of a non-positive value")
    out = _check_finite(np.log(x.data), "log")
    return _emit(x.tape, "log", (_node_id(x),), (x.data,), out)


def relu(x) -> Tensor:
    x = _coerce(x)
    out = np.maximum(x.data, 0.0)
    return _emit(x.tape, "relu", (_node_id(x),), (x.data,), out)


def lgamma(x) -> Tensor:
    """Elementwise log-Gamma; backward is the digamma function."""
    x = _coerce(x)
    try:
        out = _lgamma_kernel(x.data)
    except ValueError as e:
        raise DomainError(str(e)) from None
    _check_finite(out, "lgamma")
    return _emit(x.tape, "lgamma", (_node_id(x),), (x.data,), out)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only strictly inside."""
    x = _coerce(x)
    if not lo < hi:
        raise ShapeError("clip needs lo < hi")
    out = np.clip(x.data, lo, hi)
    return _emit(x.tape, "clip", (_node_id(x),), (x.data, lo, hi), out)


def log_floored(x) -> Tensor:
    """log with output floored at LOG_FLOOR; tolerates zeros.

    Used inside losses where an impossible event must contribute a
    large-but-finite penalty instead of -inf. Gradient is 0 on the
    floor.
    """
    x = _coerce(x)
    if x.data.size and np.any(x.data < 0.0):
        raise DomainError("log_floored of a negative value")
    with np.errstate(divide="ignore"):
        out = np.maximum(np.log(x.data), LOG_FLOOR)
    return _emit(x.tape, "log_floored", (_node_id(x),), (x.data, out), out)


def log_ndtr(x) -> Tensor:
    """log of the standard normal CDF, elementwise."""
    x = _coerce(x)
    out = _check_finite(np.asarray(_sp_log_ndtr(x.data)), "log_ndtr")
    return _emit(x.tape, "log_ndtr", (_node_id(x),), (x.data, out), out)


# ---------------------------------------------------------------------------
# Structured operations


def matmul(a, b) -> Tensor:
    """2-D matrix product."""
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = _check_finite(a.data @ b.data, "matmul")
    tape = _find_tape(a, b)
    return _emit(tape, "matmul", (_node_id(a), _node_id(b)), (a.data, b.data), out)


def node_mix(m, h) -> Tensor:
    """Left-multiply every batch slice by a node-space matrix.

    m: [V, V], h: [B, V, w] -> out[b] = m @ h[b].
    """
    m, h = _coerce(m), _coerce(h)
    if m.data.ndim != 2 or h.data.ndim != 3:
        raise ShapeError("node_mix expects m: 2-D, h: 3-D")
    if m.data.shape[1] != h.data.shape[1]:
        raise ShapeError(f"node_mix dims differ: {m.data.shape} vs {h.data.shape}")
    out = _check_finite(np.matmul(m.data, h.data), "node_mix")
    tape = _find_tape(m, h)
    return _emit(tape, "node_mix", (_node_id(m), _node_id(h)), (m.data, h.data), out)


def width_mix(h, w) -> Tensor:
    """Matrix product on the trailing axis: [.., w_in] @ [w_in, w_out]."""
    h, w = _coerce(h), _coerce(w)
    if w.data.ndim != 2 or h.data.ndim < 2:
        raise ShapeError("width_mix expects h: >=2-D, w: 2-D")
    if h.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"width_mix dims differ: {h.data.shape} vs {w.data.shape}")
    out = _check_finite(h.data @ w.data, "width_mix")
    tape = _find_tape(h, w)
    return _emit(tape, "width_mix", (_node_id(h), _node_id(w)), (h.data, w.data), out)


def add_row(h, row) -> Tensor:
    """Add a vector along the trailing axis: out[..., j] = h[..., j] + row[j]."""
    h, row = _coerce(h), _coerce(row)
    if row.data.ndim != 1 or h.data.ndim < 1:
        raise ShapeError("add_row expects h: >=1-D, row: 1-D")
    if h.data.shape[-1] != row.data.shape[0]:
        raise ShapeError(f"add_row widths differ: {h.data.shape} vs {row.data.shape}")
    out = _check_finite(h.data + row.data, "add_row")
    tape = _find_tape(h, row)
    return _emit(tape, "add_row", (_node_id(h), _node_id(row)),
                 (h.data.ndim,), out)


def conv1d(x, kernel, bias) -> Tensor:
    """Shared 1-D convolution over the trailing (time) axis.

    x: [B, V, w_in], kernel: [kw], bias: scalar. No padding, stride 1,
    so w_out = w_in - kw + 1.
    """
    x, kernel, bias = _coerce(x), _coerce(kernel), _coerce(bias)
    if x.data.ndim != 3:
        raise ShapeError("conv1d expects a 3-D input")
    if kernel.data.ndim != 1:
        raise ShapeError("conv1d kernel must be 1-D")
    if bias.data.size != 1:
        raise ShapeError("conv1d bias must be scalar")
    kw = kernel.data.shape[0]
    w_in = x.data.shape[-1]
    if not 1 <= kw <= w_in:
        raise ShapeError(f"kernel width {kw} outside [1, {w_in}]")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, kw, axis=-1)
    out = _check_finite(windows @ kernel.data + bias.data.reshape(()), "conv1d")
    tape = _find_tape(x, kernel, bias)
    return _emit(tape, "conv1d",
                 (_node_id(x), _node_id(kernel), _node_id(bias)),
                 (x.data, kernel.data, bias.data.shape), out)


def sum_all(x) -> Tensor:
    """Reduce to a scalar (shape ()) by summation."""
    x = _coerce(x)
    out = _check_finite(np.asarray(np.sum(x.data)), "sum_all")
    return _emit(x.tape, "sum_all", (_node_id(x),), (x.data.shape,), out)


def mean_all(x) -> Tensor:
    """Reduce to a scalar by averaging."""
    x = _coerce(x)
    n = x.data.size
    if n == 0:
        raise ShapeError("mean_all of an empty tensor")
    return mul(sum_all(x), 1.0 / n)


def slice_last(x, start: int, stop: int) -> Tensor:
    """Contiguous slice of the trailing axis."""
    x = _coerce(x)
    w = x.data.shape[-1] if x.data.ndim else 0
    if not 0 <= start < stop <= w:
        raise ShapeError(f"slice [{start}:{stop}] outside width {w}")
    out = x.data[..., start:stop].copy()
    return _emit(x.tape, "slice_last", (_node_id(x),),
                 (x.data.shape, start, stop), out)


# ---------------------------------------------------------------------------
# Backward rules. Each receives (node, incoming gradient) and returns one
# contribution per recorded input, aligned with node.inputs.


def _bw_add(node, g):
    sa, sb = node.saved
    return (_unbroadcast(g, sa), _unbroadcast(g, sb))


def _bw_sub(node, g):
    sa, sb = node.saved
    return (_unbroadcast(g, sa), _unbroadcast(-g, sb))


def _bw_mul(node, g):
    a, b = node.saved
    return (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _bw_sigmoid(node, g):
    (s,) = node.saved
    return (g * s * (1.0 - s),)


def _bw_softplus(node, g):
    (x,) = node.saved
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    return (g * s,)


def _bw_exp(node, g):
    (out,) = node.saved
    return (g * out,)


def _bw_log(node, g):
    (x,) = node.saved
    return (g / x,)


def _bw_relu(node, g):
    (x,) = node.saved
    return (g * (x > 0.0),)


def _bw_lgamma(node, g):
    (x,) = node.saved
    return (g * _digamma_kernel(x),)


def _bw_clip(node, g):
    x, lo, hi = node.saved
    return (g * ((x > lo) & (x < hi)),)


def _bw_log_floored(node, g):
    x, out = node.saved
    inside = out > LOG_FLOOR
    safe = np.where(inside, x, 1.0)
    return (g * inside / safe,)


def _bw_log_ndtr(node, g):
    x, out = node.saved
    # d/dx log Phi = phi/Phi, computed in log space for stability.
    log_pdf = -0.5 * x * x - _LOG_SQRT_2PI
    return (g * np.exp(log_pdf - out),)


def _bw_matmul(node, g):
    a, b = node.saved
    return (g @ b.T, a.T @ g)


def _bw_node_mix(node, g):
    m, h = node.saved
    # gm[u,v] = sum_{b,w} g[b,u,w] h[b,v,w]; gh[b] = m^T g[b].
    gm = np.tensordot(g, h, axes=([0, 2], [0, 2]))
    gh = np.matmul(m.T, g)
    return (gm, gh)


def _bw_width_mix(node, g):
    h, w = node.saved
    gh = g @ w.T
    gw = h.reshape(-1, h.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    return (gh, gw)


def _bw_add_row(node, g):
    (h_ndim,) = node.saved
    axes = tuple(range(h_ndim - 1))
    return (g, g.sum(axis=axes) if axes else g.copy())


def _bw_conv1d(node, g):
    x, kernel, bias_shape = node.saved
    kw = kernel.shape[0]
    w_out = g.shape[-1]
    gx = np.zeros_like(x)
    for i in range(kw):
        gx[..., i:i + w_out] += kernel[i] * g
    windows = np.lib.stride_tricks.sliding_window_view(x, kw, axis=-1)
    gk = np.einsum("bvj,bvjk->k", g, windows)
    gb = np.sum(g).reshape(bias_shape)
    return (gx, gk, gb)


def _bw_sum_all(node, g):
    (in_shape,) = node.saved
    return (np.broadcast_to(np.reshape(g, ()), in_shape).copy(),)


def _bw_slice_last(node, g):
    in_shape, start, stop = node.saved
    gx = np.zeros(in_shape)
    gx[..., start:stop] = g
    return (gx,)


_BACKWARD = {
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "sigmoid": _bw_sigmoid,
    "softplus": _bw_softplus,
    "exp": _bw_exp,
    "log": _bw_log,
    "relu": _bw_relu,
    "lgamma": _bw_lgamma,
    "clip": _bw_clip,
    "log_floored": _bw_log_floored,
    "log_ndtr": _bw_log_ndtr,
    "matmul": _bw_matmul,
    "node_mix": _bw_node_mix,
    "width_mix": _bw_width_mix,
    "add_row": _bw_add_row,
    "conv1d": _bw_conv1d,
    "sum_all": _bw_sum_all,
    "slice_last": _bw_slice_last,
}
