"""Spatial and temporal encoder layers.

Two parallel branches read the same demand window X of shape
[batch, nodes, t_window]:

* the spatial branch stacks three diffusion graph convolutions, each

      H' = act( sum_{k=1..K} T_k(W_f) H Theta_f[k] + T_k(W_b) H Theta_b[k] )

  where T_k are Chebyshev polynomials of the forward/backward
  transition matrices and the last layer is linear;
* the temporal branch stacks three 1-D convolutions along the time
  axis, with kernel widths chosen so the time width lands exactly on
  1, then a linear projection (with bias row) up to the head width.

Both branches end at width c*k_horizon, c being the head's parameter
count, so the fusion step can multiply them channel by channel.

Weights live in the layer objects as plain float64 arrays; ``forward``
reads them through a {name: Tensor} mapping so a training step can
register the same arrays as tape leaves while inference wraps them as
constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeError

__all__ = [
    "xavier_uniform",
    "tcn_kernel_plan",
    "DGCNLayer",
    "TCNLayer",
    "Projection",
    "EncoderStack",
]

_ACTIVATIONS = ("relu", "linear")


def xavier_uniform(fan_in: int, fan_out: int, shape, rng: np.random.Generator):
    """Uniform init on +-sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def tcn_kernel_plan(t_window: int) -> list[int]:
    """Three kernel widths that shrink t_window to exactly 1.

    Each conv removes kernel-1 steps, so the widths must sum to
    t_window + 2; they are spread as evenly as possible.
    """
    if t_window < 1:
        raise ShapeError("t_window must be >= 1")
    total = t_window + 2
    base, rem = divmod(total, 3)
    return [base + 1] * rem + [base] * (3 - rem)


def _activate(x: ad.Tensor, activation: str) -> ad.Tensor:
    if activation == "relu":
        return ad.relu(x)
    return x


@dataclass
class DGCNLayer:
    """One diffusion graph convolution over O-D pair vertices."""

    name: str
    order: int
    in_width: int
    out_width: int
    activation: str
    theta_f: list = field(default_factory=list)
    theta_b: list = field(default_factory=list)

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ShapeError(f"unknown activation '{self.activation}'")
        if self.order < 1:
            raise ShapeError("diffusion order must be >= 1")

    @classmethod
    def initialized(cls, name, order, in_width, out_width, activation,
                    rng: np.random.Generator) -> "DGCNLayer":
        layer = cls(name, order, in_width, out_width, activation)
        for lst in (layer.theta_f, layer.theta_b):
            for _ in range(order):
                lst.append(xavier_uniform(in_width, out_width,
                                          (in_width, out_width), rng))
        return layer

    def parameters(self):
        for k in range(self.order):
            yield f"{self.name}.theta_f{k}", self.theta_f[k]
        for k in range(self.order):
            yield f"{self.name}.theta_b{k}", self.theta_b[k]

    def forward(self, h: ad.Tensor, cheb_f, cheb_b, weights) -> ad.Tensor:
        """cheb_f/cheb_b are Chebyshev sequences T_0..T_order (values);
        the sum runs over k = 1..order."""
        if len(cheb_f) < self.order + 1 or len(cheb_b) < self.order + 1:
            raise ShapeError("Chebyshev sequence shorter than diffusion order")
        acc = None
        for k in range(1, self.order + 1):
            tf = weights[f"{self.name}.theta_f{k - 1}"]
            tb = weights[f"{self.name}.theta_b{k - 1}"]
            term = ad.add(ad.width_mix(ad.node_mix(ad.constant(cheb_f[k]), h), tf),
                          ad.width_mix(ad.node_mix(ad.constant(cheb_b[k]), h), tb))
            acc = term if acc is None else ad.add(acc, term)
        return _activate(acc, self.activation)


@dataclass
class TCNLayer:
    """One shared 1-D convolution along the time axis (no padding)."""

    name: str
    kernel_width: int
    activation: str
    kernel: np.ndarray = None
    bias: np.ndarray = None

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ShapeError(f"unknown activation '{self.activation}'")
        if self.kernel_width < 1:
            raise ShapeError("kernel width must be >= 1")

    @classmethod
    def initialized(cls, name, kernel_width, activation,
                    rng: np.random.Generator) -> "TCNLayer":
        layer = cls(name, kernel_width, activation)
        layer.kernel = xavier_uniform(kernel_width, 1, (kernel_width,), rng)
        layer.bias = np.zeros(())
        return layer

    def parameters(self):
        yield f"{self.name}.kernel", self.kernel
        yield f"{self.name}.bias", self.bias

    def forward(self, h: ad.Tensor, weights) -> ad.Tensor:
        out = ad.conv1d(h, weights[f"{self.name}.kernel"],
                        weights[f"{self.name}.bias"])
        return _activate(out, self.activation)


@dataclass
class Projection:
    """Linear map on the trailing axis with a bias row."""

    name: str
    in_width: int
    out_width: int
    weight: np.ndarray = None
    bias: np.ndarray = None

    @classmethod
    def initialized(cls, name, in_width, out_width,
                    rng: np.random.Generator) -> "Projection":
        proj = cls(name, in_width, out_width)
        proj.weight = xavier_uniform(in_width, out_width,
                                     (in_width, out_width), rng)
        proj.bias = np.zeros(out_width)
        return proj

    def parameters(self):
        yield f"{self.name}.weight", self.weight
        yield f"{self.name}.bias", self.bias

    def forward(self, h: ad.Tensor, weights) -> ad.Tensor:
        return ad.add_row(ad.width_mix(h, weights[f"{self.name}.weight"]),
                          weights[f"{self.name}.bias"])


@dataclass
class EncoderStack:
    """Three DGCN layers beside three TCN layers plus the projection."""

    dgcn_layers: list
    tcn_layers: list
    projection: Projection

    @classmethod
    def build(cls, t_window: int, out_width: int, order: int,
              hidden, rng: np.random.Generator) -> "EncoderStack":
        """Standard configuration: DGCN widths t_window -> hidden ->
        out_width with a linear last layer; TCN kernels from
        tcn_kernel_plan with relu throughout."""
        hidden = list(hidden)
        if len(hidden) != 2:
            raise ShapeError("expected exactly two hidden widths")
        widths = [t_window] + hidden + [out_width]
        acts = ["relu", "relu", "linear"]
        dgcn = [DGCNLayer.initialized(f"dgcn{i}", order, widths[i],
                                      widths[i + 1], acts[i], rng)
                for i in range(3)]
        tcn = [TCNLayer.initialized(f"tcn{i}", kw, "relu", rng)
               for i, kw in enumerate(tcn_kernel_plan(t_window))]
        proj = Projection.initialized("proj", 1, out_width, rng)
        return cls(dgcn, tcn, proj)

    def parameters(self) -> dict[str, np.ndarray]:
        """Ordered {name: live array reference} over the whole stack."""
        out: dict[str, np.ndarray] = {}
        for layer in (*self.dgcn_layers, *self.tcn_layers, self.projection):
            for name, arr in layer.parameters():
                out[name] = arr
        return out

    def forward(self, x: ad.Tensor, cheb_f, cheb_b, weights):
        """Run both branches on a [B, V, T] window.

        Returns (H_s, H_t), each [B, V, out_width].
        """
        if x.data.ndim != 3:
            raise ShapeError("encoder input must be [batch, nodes, time]")
        h_s = x
        for layer in self.dgcn_layers:
            h_s = layer.forward(h_s, cheb_f, cheb_b, weights)
        h_t = x
        for layer in self.tcn_layers:
            h_t = layer.forward(h_t, weights)
        h_t = self.projection.forward(h_t, weights)
        return h_s, h_t
