"""Local-perception embedding block: identity init, locality, gradients."""

import numpy as np
import pytest

from histoscan.gradcheck import finite_diff_check
from histoscan.local_embed import LocalEmbed
from histoscan.tensor import Tensor, oracle_mode, sum_

BLOCK_TOL = 1e-4


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def _randomize_expand(block: LocalEmbed, rng: np.random.Generator) -> None:
    """The expand conv is zero-initialised; give it weight so the inner
    path actually reaches the output (otherwise most grads are zero and
    equivariance holds trivially)."""
    half = block.dim // 2
    block.w_expand.data = rng.uniform(-0.3, 0.3,
                                      block.w_expand.shape).astype(
        block.w_expand.data.dtype)
    assert block.w_expand.shape == (half, block.dim)


class TestIdentityInit:
    def test_zero_init_identity_train_mode(self, rng):
        block = LocalEmbed(8, 3, rng)
        x = Tensor(rng.standard_normal((2, 5, 5, 8)).astype(np.float32))
        out = block(x)
        assert np.array_equal(out.data, x.data)

    def test_zero_init_identity_eval_mode(self, rng):
        block = LocalEmbed(8, 3, rng).eval()
        x = Tensor(rng.standard_normal((2, 5, 5, 8)).astype(np.float32))
        out = block(x)
        assert np.array_equal(out.data, x.data)

    def test_identity_still_propagates_grads_to_inner_params(self, rng):
        # Output equals input, but the inner path must stay on the tape so
        # training can move the block away from identity.
        with oracle_mode():
            block = LocalEmbed(8, 3, rng)
            x = Tensor(rng.standard_normal((2, 4, 4, 8)), requires_grad=True)
            sum_(block(x) * block(x)).backward()
            assert block.w_expand.grad is not None
            assert np.abs(block.w_expand.grad).max() > 0

    def test_randomized_block_is_not_identity(self, rng):
        block = LocalEmbed(8, 3, rng)
        _randomize_expand(block, rng)
        x = Tensor(rng.standard_normal((2, 5, 5, 8)).astype(np.float32))
        out = block(x)
        assert not np.allclose(out.data, x.data)


class TestShapesAndErrors:
    def test_odd_dim_raises(self, rng):
        with pytest.raises(ValueError):
            LocalEmbed(7, 3, rng)

    def test_wrong_input_width_raises(self, rng):
        block = LocalEmbed(8, 3, rng)
        x = Tensor(np.zeros((1, 4, 4, 6), dtype=np.float32))
        with pytest.raises(ValueError):
            block(x)

    def test_output_shape_matches_input(self, rng):
        block = LocalEmbed(8, 3, rng)
        _randomize_expand(block, rng)
        x = Tensor(rng.standard_normal((3, 6, 7, 8)).astype(np.float32))
        assert block(x).shape == (3, 6, 7, 8)

    def test_depthwise_weight_count_is_half_width_times_kernel_area(self, rng):
        for dim, kernel in [(8, 3), (16, 5), (4, 3)]:
            block = LocalEmbed(dim, kernel, rng)
            assert block.w_dw.data.size == (dim // 2) * kernel * kernel


class TestShiftEquivariance:
    def test_interior_shift_equivariance_eval_mode(self, rng):
        # Eval-mode BN is a per-channel affine map, so the only spatial
        # coupling is the depthwise conv; away from the zero-padded border
        # the block must commute with a spatial shift.
        with oracle_mode():
            block = LocalEmbed(8, 3, rng).eval()
            _randomize_expand(block, rng)
            x = rng.standard_normal((1, 12, 12, 8))
            shift = 2
            y = block(Tensor(x)).data
            y_shift = block(Tensor(np.roll(x, shift, axis=1))).data
            rolled = np.roll(y, shift, axis=1)
            margin = block.kernel // 2 + shift
            diff = np.abs(y_shift - rolled)[:, margin:-margin, margin:-margin]
            assert diff.max() < 1e-6, f"equivariance err {diff.max():.3e}"

    def test_border_is_the_only_violation(self, rng):
        with oracle_mode():
            block = LocalEmbed(8, 3, rng).eval()
            _randomize_expand(block, rng)
            x = rng.standard_normal((1, 12, 12, 8))
            y = block(Tensor(x)).data
            y_shift = block(Tensor(np.roll(x, 3, axis=2))).data
            rolled = np.roll(y, 3, axis=2)
            # full-frame comparison should fail because padding leaks in
            assert np.abs(y_shift - rolled).max() > 1e-6


class TestGradients:
    def test_block_grad_matches_finite_differences(self, rng):
        with oracle_mode():
            block = LocalEmbed(6, 3, rng)
            _randomize_expand(block, rng)
            x = Tensor(rng.uniform(-1, 1, (2, 4, 4, 6)), requires_grad=True)
            inputs = [x] + [p for _, p in block.named_params()]
            err = finite_diff_check(lambda *ts: sum_(block(ts[0]) * block(ts[0])),
                                    inputs, eps=1e-5)
            assert err < BLOCK_TOL, f"local embed grad err {err:.3e}"

    def test_eval_mode_grad_matches_finite_differences(self, rng):
        with oracle_mode():
            block = LocalEmbed(6, 3, rng).eval()
            _randomize_expand(block, rng)
            # Nudge the BN offsets off zero: with zero offsets, spatial
            # positions whose entire depthwise window was relu-zeroed land
            # exactly on the next relu kink, where central differences
            # measure the subgradient midpoint instead of the derivative.
            block.bn1_beta.data += rng.uniform(0.05, 0.1, 3)
            block.bn2_beta.data += rng.uniform(0.05, 0.1, 3)
            x = Tensor(rng.uniform(-1, 1, (2, 4, 4, 6)), requires_grad=True)
            inputs = [x] + [p for _, p in block.named_params()]
            err = finite_diff_check(lambda *ts: sum_(block(ts[0]) * block(ts[0])),
                                    inputs, eps=1e-5)
            assert err < BLOCK_TOL, f"local embed eval grad err {err:.3e}"


class TestGhostVariant:
    def test_ghost_output_shape(self, rng):
        block = LocalEmbed(8, 3, rng, ghost=True)
        x = Tensor(rng.standard_normal((2, 5, 5, 8)).astype(np.float32))
        assert block(x).shape == (2, 5, 5, 8)

    def test_ghost_halves_come_from_primary_then_cheap(self, rng):
        # Second half is a depthwise map of the first: zeroing the cheap
        # depthwise weights must zero exactly channels [half:].
        block = LocalEmbed(8, 3, rng, ghost=True).eval()
        block.w_dw.data[...] = 0.0
        x = Tensor(rng.standard_normal((1, 4, 4, 8)).astype(np.float32))
        out = block(x).data
        assert np.abs(out[..., 4:] - out[..., 4:].ravel()[0]).max() == 0.0
        assert np.abs(out[..., :4]).max() > 0

    def test_ghost_grad_matches_finite_differences(self, rng):
        with oracle_mode():
            block = LocalEmbed(6, 3, rng, ghost=True)
            x = Tensor(rng.uniform(-1, 1, (2, 4, 4, 6)), requires_grad=True)
            inputs = [x] + [p for _, p in block.named_params()]
            err = finite_diff_check(lambda *ts: sum_(block(ts[0]) * block(ts[0])),
                                    inputs, eps=1e-5)
            assert err < BLOCK_TOL, f"ghost grad err {err:.3e}"

    def test_ghost_has_no_expand_weights(self, rng):
        block = LocalEmbed(8, 3, rng, ghost=True)
        names = {name for name, _ in block.named_params()}
        assert "w_primary" in names and "w_expand" not in names
