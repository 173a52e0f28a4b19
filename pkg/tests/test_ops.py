"""Neural-net primitives: finite-difference audits plus closed-form and
structural properties (causality, locality, normalization identities)."""

import math

import numpy as np
import pytest

import oracles
from histoscan.gradcheck import finite_diff_check
from histoscan.ops import (BNState, batch_norm, conv1d, conv1d_causal,
                           conv1d_depthwise, conv2d, conv2d_depthwise,
                           cross_entropy, gap1d, gap2d, gelu, layer_norm,
                           linear, mean_abs_error, relu, silu, softmax,
                           softplus, subsample2d, upsample_nearest2d)
from histoscan.tensor import Tensor, mean_, oracle_mode, sum_

PRIMITIVE_TOL = 1e-6
EPS = 1e-5


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def away_from_kinks(rng, *shape):
    """Inputs bounded away from 0 so ReLU-style kinks cannot corrupt FD."""
    x = rng.uniform(0.2, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return Tensor(x, requires_grad=True)


def check(fn, inputs, tol=PRIMITIVE_TOL):
    err = finite_diff_check(fn, inputs, eps=EPS)
    assert err < tol, f"max rel err {err:.3e} >= {tol}"


class TestActivations:
    def test_relu_grad(self, rng):
        with oracle_mode():
            check(lambda x: sum_(relu(x)), [away_from_kinks(rng, 4, 5)])

    def test_relu_values(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0], dtype=np.float32)
        np.testing.assert_array_equal(relu(Tensor(x)).data, np.maximum(x, 0))

    def test_silu_grad(self, rng):
        with oracle_mode():
            x = Tensor(rng.uniform(-2, 2, (4, 5)), requires_grad=True)
            check(lambda t: sum_(silu(t)), [x])

    def test_gelu_grad_and_fixed_points(self, rng):
        with oracle_mode():
            x = Tensor(rng.uniform(-2, 2, (4, 5)), requires_grad=True)
            check(lambda t: sum_(gelu(t)), [x])
            assert gelu(Tensor(np.zeros(1))).item() == 0.0
            # exact erf form: gelu(1) = 0.5 * (1 + erf(1/sqrt(2)))
            expect = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
            assert abs(gelu(Tensor(np.ones(1))).item() - expect) < 1e-12

    def test_softplus_grad_and_identity(self, rng):
        with oracle_mode():
            x = Tensor(rng.uniform(-3, 3, (4, 5)), requires_grad=True)
            check(lambda t: sum_(softplus(t)), [x])
            # softplus(0) = ln 2, softplus large ~ identity
            assert abs(softplus(Tensor(np.zeros(1))).item() - math.log(2)) < 1e-12
            assert abs(softplus(Tensor(np.full(1, 40.0))).item() - 40.0) < 1e-12


class TestLinearAndConvs:
    def test_linear_grad(self, rng):
        with oracle_mode():
            x = Tensor(rng.uniform(-1, 1, (2, 5, 3)), requires_grad=True)
            w = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
            b = Tensor(rng.uniform(-1, 1, 4), requires_grad=True)
            check(lambda a, ww, bb: sum_(linear(a, ww, bb)), [x, w, b])

    def test_conv1d_causal_grad(self, rng):
        with oracle_mode():
            x = Tensor(rng.uniform(-1, 1, (2, 6, 3)), requires_grad=True)
            w = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)  # (C, k)
            check(lambda a, ww: sum_(conv1d_causal(a, ww)), [x, w])

    def test_conv1d_causal_is_causal_bit_exact(self, rng):
        """Perturbing time t leaves outputs before t bit-identical."""
        x = rng.standard_normal((1, 8, 2)).astype(np.float32)
        w = rng.standard_normal((2, 3)).astype(np.float32)
        base = conv1d_causal(Tensor(x), Tensor(w)).data
        for t in range(8):
            x2 = x.copy()
            x2[0, t] += 1.0
            out = conv1d_causal(Tensor(x2), Tensor(w)).data
            assert out[0, :t].tobytes() == base[0, :t].tobytes()
            assert not np.array_equal(out[0, t], base[0, t])

    def test_conv1d_depthwise_no_channel_mixing(self, rng):
        x = rng.standard_normal((1, 7, 3)).astype(np.float32)
        w = rng.standard_normal((3, 3)).astype(np.float32)
        base = conv1d_depthwise(Tensor(x), Tensor(w)).data
        x2 = x.copy()
        x2[0, :, 1] += 1.0
        out = conv1d_depthwise(Tensor(x2), Tensor(w)).data
        assert np.array_equal(out[0, :, 0], base[0, :, 0])
        assert np.array_equal(out[0, :, 2], base[0, :, 2])
        assert not np.array_equal(out[0, :, 1], base[0, :, 1])

    def test_conv1d_depthwise_grad(self, rng):
        with oracle_mode():
            x = Tensor(rng.uniform(-1, 1, (2, 6, 3)), requires_grad=True)
            w = Tensor(rng.uniform(-1, 1, (3, 5)), requires_grad=True)
            check(lambda a, ww: sum_(conv1d_depthwise(a, ww)), [x, w])

    def test_conv1d_full_grad(self, rng):
        with oracle_mode():
            x = Tensor(rng.uniform(-1, 1, (2, 6, 3)), requires_grad=True)
            w = Tensor(rng.uniform(-1, 1, (3, 3, 4)), requires_grad=True)
            b = Tensor(rng.uniform(-1, 1, 4), requires_grad=True)
            check(lambda a, ww, bb: sum_(conv1d(a, ww, bb)), [x, w, b])

    def test_conv2d_depthwise_grad(self, rng):
        with oracle_mode():
            x = Tensor(rng.uniform(-1, 1, (2, 5, 5, 3)), requires_grad=True)
            w = Tensor(rng.uniform(-1, 1, (3, 3, 3)), requires_grad=True)
            check(lambda a, ww: sum_(conv2d_depthwise(a, ww)), [x, w])

    def test_conv2d_full_grad(self, rng):
        with oracle_mode():
            x = Tensor(rng.uniform(-1, 1, (2, 4, 4, 2)), requires_grad=True)
            w = Tensor(rng.uniform(-1, 1, (3, 3, 2, 3)), requires_grad=True)
            b = Tensor(rng.uniform(-1, 1, 3), requires_grad=True)
            check(lambda a, ww, bb: sum_(conv2d(a, ww, bb)), [x, w, b])

    def test_conv2d_matches_scipy(self, rng):
        from scipy.signal import correlate2d
        x = rng.standard_normal((1, 6, 6, 1)).astype(np.float64)
        w = rng.standard_normal((3, 3, 1, 1)).astype(np.float64)
        with oracle_mode():
            got = conv2d(Tensor(x), Tensor(w)).data[0, :, :, 0]
        want = correlate2d(x[0, :, :, 0], w[:, :, 0, 0], mode="same", boundary="fill")
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestNormalizeAndPool:
    def test_layer_norm_grad(self, rng):
        from histoscan.tensor import mul
        with oracle_mode():
            x = Tensor(rng.uniform(-1, 1, (2, 4, 6)), requires_grad=True)
            g = Tensor(rng.uniform(0.5, 1.5, 6), requires_grad=True)
            b = Tensor(rng.uniform(-0.5, 0.5, 6), requires_grad=True)

            def fn(a, gg, bb):
                out = layer_norm(a, gg, bb)
                return sum_(mul(out, out))

            check(fn, [x, g, b], tol=1e-5)

    def test_layer_norm_normalizes(self, rng):
        with oracle_mode():
            x = Tensor(rng.standard_normal((3, 8)) * 5 + 2)
            out = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)

    def test_batch_norm_train_grad(self, rng):
        # A random linear readout: a quadratic loss on normalized output is
        # nearly input-invariant (sum xhat = 0, sum xhat^2 pinned), which
        # collapses the analytic gradient to epsilon scale and drowns the
        # finite-difference signal.
        from histoscan.tensor import mul
        with oracle_mode():
            x = Tensor(rng.uniform(-1, 1, (4, 2, 2, 3)), requires_grad=True)
            g = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
            b = Tensor(rng.uniform(-0.5, 0.5, 3), requires_grad=True)
            w = Tensor(rng.uniform(0.5, 1.5, (4, 2, 2, 3)))

            def fn(a, gg, bb):
                st = BNState.create(3)  # fresh stats keep fn pure
                return sum_(mul(batch_norm(a, gg, bb, st, training=True), w))

            check(fn, [x, g, b], tol=1e-5)

    def test_batch_norm_eval_uses_running_stats(self, rng):
        state = BNState.create(2)
        x1 = rng.standard_normal((8, 3, 3, 2)).astype(np.float32) * 2 + 1
        g = Tensor(np.ones(2, dtype=np.float32))
        b = Tensor(np.zeros(2, dtype=np.float32))
        batch_norm(Tensor(x1), g, b, state, training=True)
        x2 = rng.standard_normal((4, 3, 3, 2)).astype(np.float32)
        out_a = batch_norm(Tensor(x2), g, b, state, training=False).data
        out_b = batch_norm(Tensor(x2), g, b, state, training=False).data
        assert np.array_equal(out_a, out_b)  # eval mode must not update stats

    def test_batch_norm_train_normalizes_batch(self, rng):
        state = BNState.create(3)
        x = rng.standard_normal((16, 4, 4, 3)).astype(np.float64) * 3 + 5
        with oracle_mode():
            out = batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                             state, training=True).data
        np.testing.assert_allclose(out.reshape(-1, 3).mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.reshape(-1, 3).var(axis=0), 1.0, atol=1e-4)

    def test_pool_grads(self, rng):
        with oracle_mode():
            x = Tensor(rng.uniform(-1, 1, (2, 4, 4, 3)), requires_grad=True)
            check(lambda a: sum_(gap2d(a)), [x])
            s = Tensor(rng.uniform(-1, 1, (2, 6, 3)), requires_grad=True)
            check(lambda a: sum_(gap1d(a)), [s])

    def test_subsample_and_upsample_grads(self, rng):
        with oracle_mode():
            x = Tensor(rng.uniform(-1, 1, (2, 4, 4, 3)), requires_grad=True)
            check(lambda a: sum_(upsample_nearest2d(subsample2d(a, 2), 2)), [x])

    def test_subsample_values(self, rng):
        x = rng.standard_normal((1, 4, 6, 2)).astype(np.float32)
        out = subsample2d(Tensor(x), 2).data
        np.testing.assert_array_equal(out, x[:, ::2, ::2])

    def test_upsample_values(self, rng):
        x = rng.standard_normal((1, 2, 2, 1)).astype(np.float32)
        out = upsample_nearest2d(Tensor(x), 3).data
        assert out.shape == (1, 6, 6, 1)
        np.testing.assert_array_equal(out, np.repeat(np.repeat(x, 3, 1), 3, 2))


class TestLosses:
    def test_softmax_rows_sum_one(self, rng):
        z = rng.standard_normal((5, 7)) * 10
        p = softmax(z)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(p > 0)

    def test_cross_entropy_matches_oracle(self, rng):
        with oracle_mode():
            z = rng.standard_normal((6, 4))
            y = rng.integers(0, 4, 6)
            got = cross_entropy(Tensor(z), y).item()
        want = oracles.cross_entropy_mean(z, y)
        assert abs(got - want) < 1e-12

    def test_cross_entropy_uniform_equals_log_k(self):
        with oracle_mode():
            for k in (2, 5, 9):
                loss = cross_entropy(Tensor(np.zeros((3, k))), np.zeros(3, dtype=np.int64))
                assert abs(loss.item() - math.log(k)) < 1e-9

    def test_cross_entropy_grad_int_targets(self, rng):
        with oracle_mode():
            z = Tensor(rng.uniform(-1, 1, (4, 5)), requires_grad=True)
            y = rng.integers(0, 5, 4)
            check(lambda a: cross_entropy(a, y), [z])

    def test_cross_entropy_grad_soft_targets(self, rng):
        with oracle_mode():
            z = Tensor(rng.uniform(-1, 1, (4, 5)), requires_grad=True)
            yk = rng.uniform(0.1, 1.0, (4, 5))
            yk /= yk.sum(axis=1, keepdims=True)
            check(lambda a: cross_entropy(a, yk), [z])

    def test_cross_entropy_soft_grad_closed_form(self, rng):
        with oracle_mode():
            z = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
            y = np.eye(4)[[0, 2, 3]]
            cross_entropy(z, y).backward()
            want = (oracles.softmax_rows(z.data) - y) / 3.0
            np.testing.assert_allclose(z.grad, want, atol=1e-12)

    def test_mean_abs_error_grad(self, rng):
        with oracle_mode():
            p = Tensor(rng.uniform(-1, 1, (3, 2)) + 3.0, requires_grad=True)
            t = rng.uniform(-1, 1, (3, 2))  # offset keeps |.| away from its kink
            check(lambda a: mean_abs_error(a, t), [p])
