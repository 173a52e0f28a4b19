"""Masked-token pretraining: masks, token swap, decoder, masked loss."""

import numpy as np
import pytest

from histoscan.backbone import Encoder, tiny_preset
from histoscan.gradcheck import finite_diff_check
from histoscan.pretrain import (MaskSpec, PretrainModel, apply_mask,
                                make_mask, masked_recon_loss, patchify,
                                stack_masks, unpatchify)
from histoscan.tensor import Tensor, oracle_mode, sum_


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestMaskSampling:
    def test_mask_size_is_rounded_fraction(self, rng):
        for gh, gw in [(4, 4), (8, 8), (7, 5), (3, 3)]:
            for ratio in (0.25, 0.5, 0.6, 0.75, 1.0):
                spec = make_mask((gh, gw), ratio, rng)
                assert spec.n_masked == int(round(ratio * gh * gw))

    def test_indices_sorted_unique_in_range(self, rng):
        spec = make_mask((8, 8), 0.75, rng)
        idx = spec.indices
        assert np.array_equal(idx, np.sort(np.unique(idx)))
        assert idx.min() >= 0 and idx.max() < 64

    def test_ratio_bounds_raise(self, rng):
        for bad in (0.0, -0.1, 1.2):
            with pytest.raises(ValueError):
                make_mask((4, 4), bad, rng)

    def test_same_generator_state_same_mask(self):
        a = make_mask((8, 8), 0.75, np.random.default_rng(3))
        b = make_mask((8, 8), 0.75, np.random.default_rng(3))
        assert np.array_equal(a.indices, b.indices)

    def test_as_grid_marks_exactly_the_indices(self, rng):
        spec = make_mask((4, 6), 0.5, rng)
        grid = spec.as_grid()
        assert grid.shape == (4, 6, 1)
        assert np.array_equal(np.flatnonzero(grid.reshape(-1)), spec.indices)
        assert grid.sum() == spec.n_masked

    def test_stack_masks_shape(self, rng):
        specs = [make_mask((4, 4), 0.75, rng) for _ in range(3)]
        stacked = stack_masks(specs)
        assert stacked.shape == (3, 4, 4, 1)
        for i, s in enumerate(specs):
            assert np.array_equal(stacked[i], s.as_grid())


class TestApplyMask:
    def test_values_swapped_only_at_masked(self, rng):
        tokens = Tensor(rng.standard_normal((2, 4, 4, 8)).astype(np.float32))
        token = Tensor(rng.standard_normal(8).astype(np.float32))
        mask = stack_masks([make_mask((4, 4), 0.5, rng) for _ in range(2)])
        out = apply_mask(tokens, mask, token).data
        m = mask.astype(bool)[..., 0]
        assert np.array_equal(out[m], np.broadcast_to(token.data, out[m].shape))
        assert np.array_equal(out[~m], tokens.data[~m])

    def test_grad_routing(self, rng):
        with oracle_mode():
            tokens = Tensor(rng.standard_normal((1, 4, 4, 4)),
                            requires_grad=True)
            token = Tensor(rng.standard_normal(4), requires_grad=True)
            mask = stack_masks([make_mask((4, 4), 0.5, rng)])
            sum_(apply_mask(tokens, mask, token)).backward()
            m = mask.astype(bool)[..., 0]
            # token grad counts masked positions; tokens grad is the mask
            # complement broadcast over channels
            assert np.allclose(token.grad, m.sum())
            assert np.array_equal(tokens.grad[m],
                                  np.zeros_like(tokens.grad[m]))
            assert np.array_equal(tokens.grad[~m],
                                  np.ones_like(tokens.grad[~m]))

    def test_bad_mask_shape_raises(self, rng):
        tokens = Tensor(np.zeros((1, 4, 4, 4), dtype=np.float32))
        token = Tensor(np.zeros(4, dtype=np.float32))
        with pytest.raises(ValueError):
            apply_mask(tokens, np.zeros((1, 4, 4)), token)


class TestPatchRoundTrip:
    def test_unpatchify_inverts_patchify(self, rng):
        imgs = rng.standard_normal((2, 16, 16, 3))
        assert np.array_equal(unpatchify(patchify(imgs, 4), 4), imgs)

    def test_patchify_flat_order(self):
        # one 2x2 single-channel patch: flattening preserves row-major order
        img = np.arange(4, dtype=np.float64).reshape(1, 2, 2, 1)
        assert np.array_equal(patchify(img, 2).reshape(-1), [0, 1, 2, 3])

    def test_unpatchify_dim_mismatch_raises(self):
        with pytest.raises(ValueError):
            unpatchify(np.zeros((1, 4, 4, 47)), 4)


class TestMaskedLoss:
    def test_loss_ignores_unmasked_predictions(self, rng):
        preds = rng.standard_normal((1, 4, 4, 8))
        targets = rng.standard_normal((1, 4, 4, 8))
        mask = stack_masks([make_mask((4, 4), 0.5, rng)])
        base = masked_recon_loss(Tensor(preds), targets, mask).item()
        noisy = preds.copy()
        noisy[mask[..., 0] == 0] += 100.0
        after = masked_recon_loss(Tensor(noisy), targets, mask).item()
        assert after == pytest.approx(base, abs=1e-12)

    def test_loss_is_mse_over_masked_patches(self, rng):
        preds = rng.standard_normal((2, 4, 4, 6))
        targets = rng.standard_normal((2, 4, 4, 6))
        mask = stack_masks([make_mask((4, 4), 0.75, rng) for _ in range(2)])
        with oracle_mode():
            got = masked_recon_loss(Tensor(preds), targets, mask).item()
        sq = ((preds - targets) ** 2)[mask[..., 0].astype(bool)]
        assert got == pytest.approx(sq.mean(), rel=1e-12)

    def test_grad_zero_at_unmasked(self, rng):
        with oracle_mode():
            preds = Tensor(rng.standard_normal((1, 4, 4, 8)),
                           requires_grad=True)
            targets = rng.standard_normal((1, 4, 4, 8))
            mask = stack_masks([make_mask((4, 4), 0.5, rng)])
            masked_recon_loss(preds, targets, mask).backward()
            unmasked = mask[..., 0] == 0
            assert np.abs(preds.grad[unmasked]).max() == 0.0
            assert np.abs(preds.grad[~unmasked]).max() > 0.0

    def test_empty_mask_raises(self, rng):
        preds = Tensor(np.zeros((1, 2, 2, 4)))
        with pytest.raises(ValueError):
            masked_recon_loss(preds, np.zeros((1, 2, 2, 4)),
                              np.zeros((1, 2, 2, 1)))

    def test_shape_mismatch_raises(self, rng):
        preds = Tensor(np.zeros((1, 2, 2, 4)))
        with pytest.raises(ValueError):
            masked_recon_loss(preds, np.zeros((1, 2, 2, 5)),
                              np.ones((1, 2, 2, 1)))


class TestPretrainModel:
    def test_prediction_shape_covers_full_grid(self, rng):
        enc = Encoder(tiny_preset(), rng)
        model = PretrainModel(enc, rng, decoder_dim=16, decoder_depth=1)
        imgs = Tensor(rng.standard_normal((2, 16, 16, 3)).astype(np.float32))
        mask = stack_masks([make_mask((4, 4), 0.75, rng) for _ in range(2)])
        preds = model.predict(imgs, mask)
        assert preds.shape == (2, 4, 4, 4 * 4 * 3)

    def test_loss_decreases_along_gradient(self, rng):
        # single manual step on the pixel head must reduce the loss
        with oracle_mode():
            enc = Encoder(tiny_preset(), rng)
            model = PretrainModel(enc, rng, decoder_dim=16, decoder_depth=1)
            imgs = rng.standard_normal((2, 16, 16, 3))
            targets = patchify(imgs, 4)
            mask = stack_masks([make_mask((4, 4), 0.75, rng)
                                for _ in range(2)])
            loss = masked_recon_loss(model.predict(Tensor(imgs), mask),
                                     targets, mask)
            loss.backward()
            model.w_pixels.data -= 0.5 * model.w_pixels.grad
            model.b_pixels.data -= 0.5 * model.b_pixels.grad
            after = masked_recon_loss(model.predict(Tensor(imgs), mask),
                                      targets, mask)
            assert after.item() < loss.item()

    def test_pipeline_grad_matches_finite_differences(self, rng):
        # deep composition: eps=1e-4, tol 1e-3 (same regime as the
        # end-to-end encoder check)
        with oracle_mode():
            enc = Encoder(tiny_preset(), rng)
            for name, p in enc.named_params():
                if name.endswith(("w_expand", "w_out")):
                    p.data = rng.uniform(-0.3, 0.3, p.shape)
            model = PretrainModel(enc, rng, decoder_dim=8, decoder_depth=1)
            imgs = Tensor(rng.uniform(-1, 1, (1, 16, 16, 3)),
                          requires_grad=True)
            targets = patchify(imgs.data.copy(), 4)
            mask = stack_masks([make_mask((4, 4), 0.75, rng)])
            picked = dict(model.named_params())
            subset = [imgs, model.mask_token, picked["b_bridge"],
                      picked["blocks.0.mixer.scan.fwd.log_A"],
                      picked["b_pixels"]]

            def loss_fn(*ts):
                return masked_recon_loss(model.predict(ts[0], mask),
                                         targets, mask)

            err = finite_diff_check(loss_fn, subset, eps=1e-4)
            assert err < 1e-3, f"pretrain pipeline grad err {err:.3e}"

    def test_mask_token_receives_gradient(self, rng):
        with oracle_mode():
            enc = Encoder(tiny_preset(), rng)
            model = PretrainModel(enc, rng, decoder_dim=8, decoder_depth=1)
            imgs = rng.standard_normal((1, 16, 16, 3))
            mask = stack_masks([make_mask((4, 4), 0.75, rng)])
            loss = masked_recon_loss(model.predict(Tensor(imgs), mask),
                                     patchify(imgs, 4), mask)
            loss.backward()
            assert model.mask_token.grad is not None
            assert np.abs(model.mask_token.grad).max() > 0
