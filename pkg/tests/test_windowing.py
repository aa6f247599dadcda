import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sscan.attention import AttentionConfig, token_to_token_attention
from sscan.tensor import Tensor, backward, tsum
from sscan.windowing import (
    MASK_VALUE,
    RegionGrid,
    cyclic_shift,
    merge_windows,
    partition_windows,
    region_labels,
    shift_attention_mask,
)


def test_single_window_row_major():
    x = np.arange(16.0).reshape(4, 4, 1)
    w, grid = partition_windows(Tensor(x), 4)
    assert w.shape == (1, 16, 1) and grid.n_regions == 1
    np.testing.assert_array_equal(w.data[0, :, 0], np.arange(16))


def test_value_layout_m2():
    x = np.arange(16.0).reshape(4, 4, 1)
    w, grid = partition_windows(Tensor(x), 2)
    assert (grid.h_windows, grid.w_windows) == (2, 2)
    np.testing.assert_array_equal(w.data[0, :, 0], [0, 1, 4, 5])
    np.testing.assert_array_equal(w.data[1, :, 0], [2, 3, 6, 7])


def test_padding_5x5():
    x = np.random.default_rng(0).normal(size=(5, 5, 3))
    w, grid = partition_windows(Tensor(x), 4)
    assert (grid.h_windows, grid.w_windows, grid.pad_bottom, grid.pad_right) == (2, 2, 3, 3)
    assert grid.h_windows * 4 == grid.feature_h + grid.pad_bottom
    np.testing.assert_array_equal(merge_windows(w, grid).data, x)


def test_roundtrip_exhaustive_small():
    rng = np.random.default_rng(1)
    for m in (2, 4, 8):
        for h, w in itertools.product(range(1, 65, 7), range(1, 65, 9)):
            x = rng.normal(size=(h, w, 2))
            win, grid = partition_windows(Tensor(x), m)
            assert grid.n_regions == grid.h_windows * grid.w_windows
            assert grid.padded_h % m == 0 and grid.padded_w % m == 0
            np.testing.assert_array_equal(merge_windows(win, grid).data, x)


def test_partition_gradient_is_adjoint():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(8, 8, 2)), requires_grad=True)
    w, _ = partition_windows(x, 4)
    g = rng.normal(size=w.shape)
    backward(tsum(w * Tensor(g)))
    # no padding, so the map is a permutation: <Px, g> == <x, P^T g>
    assert np.isclose((w.data * g).sum(), (x.data * x.grad).sum())


class TestCyclicShift:
    def test_zero_is_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 4, 2))
        np.testing.assert_array_equal(cyclic_shift(Tensor(x), 0, 0).data, x)

    def test_two_by_two(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        np.testing.assert_array_equal(cyclic_shift(Tensor(x), 1, 1).data[:, :, 0], [[4, 3], [2, 1]])

    @given(st.integers(1, 9), st.integers(1, 9), st.integers(-20, 20), st.integers(-20, 20))
    @settings(max_examples=40, deadline=None)
    def test_inverse_bitwise(self, h, w, dy, dx):
        x = np.random.default_rng(h * 100 + w).normal(size=(h, w, 3))
        back = cyclic_shift(cyclic_shift(Tensor(x), dy, dx), -dy, -dx).data
        assert back.tobytes() == x.tobytes()


class TestShiftMask:
    def test_shift_zero_is_zero(self):
        grid = RegionGrid.for_shape(8, 8, 4)
        assert not shift_attention_mask(grid, 0).any()

    def test_corner_window_count(self):
        grid = RegionGrid.for_shape(8, 8, 4)
        mask = shift_attention_mask(grid, 2)
        allowed = (mask == 0).sum(axis=(1, 2))
        # the last window straddles both shift seams
        assert allowed[-1] == 64
        assert allowed[0] == 256
        assert set(np.unique(mask)) <= {0.0, MASK_VALUE}

    def test_matches_brute_force_labels(self):
        grid = RegionGrid.for_shape(16, 8, 4)
        labels = region_labels(grid, 2)
        mask = shift_attention_mask(grid, 2)
        m = 4
        for r in range(grid.h_windows):
            for c in range(grid.w_windows):
                tile = labels[r * m : (r + 1) * m, c * m : (c + 1) * m].reshape(-1)
                want = np.where(tile[:, None] == tile[None, :], 0.0, MASK_VALUE)
                np.testing.assert_array_equal(mask[r * grid.w_windows + c], want)

    @pytest.mark.parametrize("shift", [-1, 4, 5])
    def test_bad_shift(self, shift):
        with pytest.raises(ValueError):
            shift_attention_mask(RegionGrid.for_shape(8, 8, 4), shift)

    def test_constant_values_ignore_mask(self):
        grid = RegionGrid.for_shape(8, 8, 4)
        mask = shift_attention_mask(grid, 2)[:, None]
        rng = np.random.default_rng(0)
        q = Tensor(rng.normal(size=(4, 1, 16, 3)))
        k = Tensor(rng.normal(size=(4, 1, 16, 3)))
        v = Tensor(np.full((4, 1, 16, 3), 2.5))
        out = token_to_token_attention(q, k, v, mask)
        np.testing.assert_allclose(out.data, 2.5, atol=1e-12)


def test_mask_shift_matches_config_default():
    assert AttentionConfig().window_size // 2 == 4
