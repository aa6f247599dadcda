import numpy as np
import pytest

from sscan.data import box_downsample, find_pairs, make_toy_patches
from sscan.io import save_png
from sscan.metrics import ImageU8
from sscan.model import ModelConfig, init_weights
from sscan.optim import adam_step, evaluate_pairs, l1_loss, super_resolve, train_toy
from sscan.tensor import Tensor, backward, finite_diff_grad, max_rel_error

MICRO = ModelConfig(embed_dim=8, n_sscan_blocks=1, n_fgca_blocks=1, window_size=4, num_heads=2, scale=2,
                    topk_train=2, topk_infer=4)


class TestL1:
    def test_equal_is_zero(self):
        x = np.random.default_rng(0).normal(size=(2, 3))
        assert l1_loss(Tensor(x), Tensor(x)).item() == 0.0

    def test_unit_offset(self):
        x = np.random.default_rng(1).normal(size=(4, 4))
        assert l1_loss(Tensor(x + 1), Tensor(x)).item() == pytest.approx(1.0)

    def test_gradient(self):
        rng = np.random.default_rng(2)
        p, t = Tensor(rng.normal(size=(3, 4)), requires_grad=True), Tensor(rng.normal(size=(3, 4)))
        backward(l1_loss(p, t))
        assert max_rel_error(p.grad, finite_diff_grad(lambda q: l1_loss(q, t), p)) < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            l1_loss(Tensor(np.ones(2)), Tensor(np.ones(3)))


class TestAdam:
    def test_zero_grads_leave_params(self):
        p = {"w": np.array([1.0, -2.0])}
        adam_step(p, {"w": np.zeros(2)}, {}, lr=0.1)
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_first_step_is_lr_sign(self):
        p = {"w": np.zeros(3)}
        adam_step(p, {"w": np.array([50.0, -3.0, 1e4])}, {}, lr=0.01)
        np.testing.assert_allclose(p["w"], [-0.01, 0.01, -0.01], rtol=1e-6)

    def test_quadratic_converges(self):
        p, state = {"x": np.array([3.0])}, {}
        for _ in range(100):
            adam_step(p, {"x": 2 * (p["x"] - 1.0)}, state, lr=0.1)
        # objective (x - 1)^2 within 1e-3 of its minimum
        assert (p["x"][0] - 1.0) ** 2 < 1e-3
        assert state["t"] == 100

    def test_missing_grad_skipped(self):
        p = {"a": np.ones(1), "b": np.ones(1)}
        adam_step(p, {"a": np.ones(1)}, {}, lr=0.1)
        assert p["b"][0] == 1.0 and p["a"][0] < 1.0


class TestData:
    def test_box_downsample(self):
        hr = np.arange(16.0).reshape(1, 4, 4)
        np.testing.assert_array_equal(box_downsample(hr, 2)[0], [[2.5, 4.5], [10.5, 12.5]])

    def test_toy_patch_shapes(self):
        pairs = make_toy_patches(3, 16, 3, seed=1)
        assert len(pairs) == 3
        lo, hi = pairs[0]
        assert (lo.height, lo.width, hi.height, hi.width) == (16, 16, 48, 48)
        again = make_toy_patches(3, 16, 3, seed=1)
        assert all(np.array_equal(a[0].pixels, b[0].pixels) for a, b in zip(pairs, again))

    def test_find_pairs(self, tmp_path):
        img = ImageU8(np.zeros((4, 4), np.uint8))
        for stem in ("b", "a"):
            save_png(img, tmp_path / f"{stem}_lr.png")
            save_png(img, tmp_path / f"{stem}_hr.png")
        save_png(img, tmp_path / "notes.png")
        assert [s for s, _, _ in find_pairs(tmp_path)] == ["a", "b"]

    def test_missing_mate_named(self, tmp_path):
        save_png(ImageU8(np.zeros((4, 4), np.uint8)), tmp_path / "x_lr.png")
        with pytest.raises(FileNotFoundError, match="x_hr.png"):
            find_pairs(tmp_path)


class TestTraining:
    def test_zero_iterations_keep_init(self):
        store, curve = train_toy(MICRO, make_toy_patches(2, 8, 2), 0, seed=3)
        init = init_weights(MICRO, 3)
        assert curve == []
        assert all(np.array_equal(store[k].data, init[k].data) for k in init)

    def test_curve_length_and_determinism(self):
        patches = make_toy_patches(2, 8, 2, seed=0)
        _, a = train_toy(MICRO, patches, 4, lr=1e-3, seed=0)
        _, b = train_toy(MICRO, patches, 4, lr=1e-3, seed=0)
        assert len(a) == 4 and a == b

    def test_minibatch_and_augment_run(self):
        patches = make_toy_patches(3, 8, 2, seed=0)
        _, curve = train_toy(MICRO, patches, 3, lr=1e-3, seed=1, batch_size=2, augment=True)
        assert len(curve) == 3 and all(np.isfinite(curve))

    def test_float_array_patches(self):
        rng = np.random.default_rng(0)
        patches = [(rng.uniform(size=(3, 8, 8)), rng.uniform(size=(3, 16, 16)))]
        _, curve = train_toy(MICRO, patches, 2, lr=1e-3)
        assert curve[1] < curve[0]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            train_toy(MICRO, [], 1)

    @pytest.mark.slow
    def test_trained_beats_untrained_on_held_out(self):
        train = make_toy_patches(6, 16, 2, seed=0)
        held = make_toy_patches(2, 16, 2, seed=99)
        store, _ = train_toy(MICRO, train, 60, lr=2e-3, seed=0)
        before = evaluate_pairs(held, 2, MICRO, init_weights(MICRO, 0))["psnr"]
        after = evaluate_pairs(held, 2, MICRO, store)["psnr"]
        assert after > before


class TestInference:
    def test_super_resolve_shape(self):
        cfg = ModelConfig(embed_dim=8, n_sscan_blocks=1, n_fgca_blocks=1, window_size=4, num_heads=2, scale=4)
        img = ImageU8(np.random.default_rng(0).integers(0, 256, (32, 32, 3), dtype=np.uint8))
        out = super_resolve(img, cfg, init_weights(cfg, 0))
        assert (out.height, out.width, out.channels) == (128, 128, 3)

    def test_gray_input_promoted(self):
        img = ImageU8(np.zeros((8, 8), np.uint8))
        assert super_resolve(img, MICRO, init_weights(MICRO, 0)).channels == 3

    def test_eval_identical_pairs(self):
        img = ImageU8(np.random.default_rng(0).integers(0, 256, (24, 24, 3), dtype=np.uint8))
        res = evaluate_pairs([(img, img)], 2)
        assert res["psnr"] == float("inf") and res["ssim"] == pytest.approx(1.0)
