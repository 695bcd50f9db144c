"""Encoder layer checks against naive loop oracles."""

import numpy as np
import pytest

from odcast import autodiff as ad
from odcast.errors import ShapeError
from odcast.graph import chebyshev_sequence
from odcast.layers import (DGCNLayer, EncoderStack, Projection, TCNLayer,
                           tcn_kernel_plan, xavier_uniform)


def naive_dgcn(h, cheb_f, cheb_b, theta_f, theta_b, activation):
    """Triple-loop reference for one diffusion graph convolution."""
    batch, _, _ = h.shape
    out = np.zeros((batch, h.shape[1], theta_f[0].shape[1]))
    for b in range(batch):
        for k in range(len(theta_f)):
            out[b] += cheb_f[k + 1] @ h[b] @ theta_f[k]
            out[b] += cheb_b[k + 1] @ h[b] @ theta_b[k]
    return np.maximum(out, 0.0) if activation == "relu" else out


def naive_tcn(h, kernel, bias):
    """Loop reference for the shared time-axis convolution."""
    kw = len(kernel)
    w_out = h.shape[-1] - kw + 1
    out = np.zeros(h.shape[:-1] + (w_out,))
    for j in range(w_out):
        for i in range(kw):
            out[..., j] += kernel[i] * h[..., j + i]
    return out + bias


def as_constants(params):
    return {name: ad.constant(arr) for name, arr in params.items()}


class TestKernelPlan:
    def test_example(self):
        assert tcn_kernel_plan(8) == [4, 3, 3]

    def test_collapses_to_one(self):
        for t in range(1, 41):
            widths = [t]
            for kw in tcn_kernel_plan(t):
                assert kw >= 1
                widths.append(widths[-1] - kw + 1)
            assert widths[-1] == 1
            assert all(w >= 1 for w in widths)

    def test_rejects_zero(self):
        with pytest.raises(ShapeError):
            tcn_kernel_plan(0)


class TestDGCNLayer:
    def test_identity_configuration(self):
        """T_1 = I with half-identity weights reproduces the input."""
        rng = np.random.default_rng(0)
        h = rng.normal(size=(2, 3, 4))
        eye3 = np.eye(3)
        layer = DGCNLayer("g", 1, 4, 4, "linear",
                          theta_f=[np.eye(4) / 2], theta_b=[np.eye(4) / 2])
        cheb = chebyshev_sequence(eye3, 1)
        out = layer.forward(ad.constant(h), cheb, cheb,
                            as_constants(dict(layer.parameters())))
        np.testing.assert_allclose(out.data, h, atol=1e-15)

    def test_single_node_is_dense(self):
        """V=1 collapses to a per-width dense transform."""
        rng = np.random.default_rng(1)
        h = rng.normal(size=(3, 1, 5))
        layer = DGCNLayer.initialized("g", 3, 5, 4, "relu", rng)
        one = np.ones((1, 1))
        cheb = chebyshev_sequence(one, 3)
        out = layer.forward(ad.constant(h), cheb, cheb,
                            as_constants(dict(layer.parameters())))
        dense = sum(layer.theta_f[k] + layer.theta_b[k] for k in range(3))
        np.testing.assert_allclose(out.data, np.maximum(h @ dense, 0.0),
                                   rtol=1e-12, atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        h = rng.normal(size=(2, 4, 3))
        w = rng.uniform(0.1, 1.0, size=(4, 4))
        w = w / w.sum(axis=1, keepdims=True)
        cheb_f = chebyshev_sequence(w, 2)
        cheb_b = chebyshev_sequence(w.T, 2)
        layer = DGCNLayer.initialized("g", 2, 3, 6, "relu", rng)
        out = layer.forward(ad.constant(h), cheb_f, cheb_b,
                            as_constants(dict(layer.parameters())))
        ref = naive_dgcn(h, cheb_f, cheb_b, layer.theta_f, layer.theta_b, "relu")
        np.testing.assert_allclose(out.data, ref, rtol=1e-12, atol=1e-12)

    def test_output_width(self):
        rng = np.random.default_rng(3)
        layer = DGCNLayer.initialized("g", 2, 7, 3, "linear", rng)
        cheb = chebyshev_sequence(np.eye(5), 2)
        out = layer.forward(ad.constant(rng.normal(size=(2, 5, 7))),
                            cheb, cheb, as_constants(dict(layer.parameters())))
        assert out.data.shape == (2, 5, 3)

    def test_short_chebyshev_rejected(self):
        rng = np.random.default_rng(4)
        layer = DGCNLayer.initialized("g", 3, 4, 4, "relu", rng)
        cheb = chebyshev_sequence(np.eye(2), 2)
        with pytest.raises(ShapeError):
            layer.forward(ad.constant(rng.normal(size=(1, 2, 4))), cheb, cheb,
                          as_constants(dict(layer.parameters())))

    def test_validation(self):
        with pytest.raises(ShapeError):
            DGCNLayer("g", 0, 3, 3, "relu")
        with pytest.raises(ShapeError):
            DGCNLayer("g", 1, 3, 3, "tanh")


class TestTCNLayer:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        h = rng.normal(size=(2, 3, 7))
        layer = TCNLayer.initialized("t", 3, "linear", rng)
        layer.bias = np.asarray(0.37)
        out = layer.forward(ad.constant(h), as_constants(dict(layer.parameters())))
        np.testing.assert_allclose(out.data, naive_tcn(h, layer.kernel, 0.37),
                                   rtol=1e-12, atol=1e-12)

    def test_width_strictly_decreases(self):
        rng = np.random.default_rng(6)
        h = ad.constant(rng.normal(size=(1, 2, 9)))
        layer = TCNLayer.initialized("t", 4, "relu", rng)
        out = layer.forward(h, as_constants(dict(layer.parameters())))
        assert out.data.shape == (1, 2, 6)


class TestEncoderStack:
    def test_all_identity_layers(self):
        """Identity spatial layers and pass-through temporal layers
        reproduce the input on both branches."""
        t = out = 3
        dgcn = [DGCNLayer(f"dgcn{i}", 1, t, t, "linear",
                          theta_f=[np.eye(t) / 2], theta_b=[np.eye(t) / 2])
                for i in range(3)]
        tcn = []
        for i in range(3):
            layer = TCNLayer(f"tcn{i}", 1, "linear")
            layer.kernel = np.array([1.0])
            layer.bias = np.zeros(())
            tcn.append(layer)
        proj = Projection("proj", t, out)
        proj.weight = np.eye(t)
        proj.bias = np.zeros(out)
        stack = EncoderStack(dgcn, tcn, proj)

        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 4, t))
        cheb = chebyshev_sequence(np.eye(4), 1)
        h_s, h_t = stack.forward(ad.constant(x), cheb, cheb,
                                 as_constants(stack.parameters()))
        np.testing.assert_allclose(h_s.data, x, atol=1e-15)
        np.testing.assert_allclose(h_t.data, x, atol=1e-15)

    def test_built_shapes(self):
        rng = np.random.default_rng(8)
        stack = EncoderStack.build(t_window=8, out_width=6, order=3,
                                   hidden=(32, 32), rng=rng)
        w = np.full((5, 5), 0.2)
        cheb_f = chebyshev_sequence(w, 3)
        x = ad.constant(rng.normal(size=(4, 5, 8)))
        h_s, h_t = stack.forward(x, cheb_f, cheb_f,
                                 as_constants(stack.parameters()))
        assert h_s.data.shape == (4, 5, 6)
        assert h_t.data.shape == (4, 5, 6)

    def test_parameter_names_unique(self):
        rng = np.random.default_rng(9)
        stack = EncoderStack.build(5, 4, 2, (8, 8), rng)
        params = stack.parameters()
        assert len(params) == 2 * 2 * (1 + 1 + 1) + 3 * 2 + 2
        # Live references: mutating through the dict mutates the layer.
        params["dgcn0.theta_f0"][0, 0] = 123.0
        assert stack.dgcn_layers[0].theta_f[0][0, 0] == 123.0

    def test_xavier_bound(self):
        rng = np.random.default_rng(10)
        w = xavier_uniform(20, 30, (20, 30), rng)
        assert np.all(np.abs(w) <= np.sqrt(6.0 / 50.0))

    def test_stack_gradients_match_finite_differences(self):
        """Every stack weight against central differences.

        Parameters are jittered away from zero so no relu sits on its
        kink, where finite differences are meaningless; the margin is
        asserted below.
        """
        rng = np.random.default_rng(0)
        stack = EncoderStack.build(t_window=4, out_width=2, order=2,
                                   hidden=(3, 3), rng=rng)
        params = stack.parameters()
        for arr in params.values():
            arr[...] = arr + rng.uniform(0.05, 0.35, size=arr.shape)
        w = np.abs(rng.normal(size=(3, 3))) + 0.1
        cheb_f = chebyshev_sequence(w / w.sum(1, keepdims=True), 2)
        x = rng.normal(size=(2, 3, 4))
        c1 = rng.normal(size=(2, 3, 2))
        c2 = rng.normal(size=(2, 3, 2))

        consts = as_constants(params)
        h = ad.constant(x)
        for layer in stack.tcn_layers:
            pre = ad.conv1d(h, consts[f"{layer.name}.kernel"],
                            consts[f"{layer.name}.bias"])
            assert float(np.min(np.abs(pre.data))) > 1e-3
            h = ad.relu(pre)

        def value(_):
            h_s, h_t = stack.forward(ad.constant(x), cheb_f, cheb_f,
                                     as_constants(params))
            return float(np.sum(h_s.data * c1) + np.sum(h_t.data * c2))

        tape = ad.Tape()
        leaves = {name: tape.leaf(arr) for name, arr in params.items()}
        h_s, h_t = stack.forward(ad.constant(x), cheb_f, cheb_f, leaves)
        loss = ad.add(ad.sum_all(ad.mul(h_s, ad.constant(c1))),
                      ad.sum_all(ad.mul(h_t, ad.constant(c2))))
        grads = tape.backward(loss.node)

        eps = 1e-6
        for name, arr in params.items():
            analytic = grads.get(leaves[name].node, np.zeros_like(arr))
            numeric = np.zeros_like(arr)
            flat, nf = arr.reshape(-1), numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = value(None)
                flat[i] = orig - eps
                fm = value(None)
                flat[i] = orig
                nf[i] = (fp - fm) / (2 * eps)
            scale = max(float(np.max(np.abs(numeric))), 1e-6)
            err = float(np.max(np.abs(analytic - numeric))) / scale
            assert err < 1e-5, f"{name}: {err:.2e}"
