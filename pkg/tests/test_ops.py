"""Pooling, upsampling, activations, concat, padding: values and adjoints."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lenslearn import ops
from lenslearn.tensor import Tensor, ShapeError

from oracles import maxpool2x2_naive


class TestMaxPool:
    def test_window_max_and_argmax(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
        out, arg = ops.maxpool2x2(x)
        assert out.data[0, 0, 0, 0] == 4.0
        assert arg[0, 0, 0, 0] == 3  # bottom-right in row-major window order

    def test_constant_input_ties_to_first_index(self):
        x = Tensor(np.full((1, 1, 4, 4), 0.5, dtype=np.float32))
        out, arg = ops.maxpool2x2(x)
        assert np.all(out.data == 0.5)
        assert np.all(arg == 0)
        g = ops.maxpool2x2_backward(arg, Tensor(np.ones_like(out.data)))
        # all gradient lands on window position (0, 0)
        assert np.all(g.data[:, :, ::2, ::2] == 1.0)
        assert g.data.sum() == out.data.size

    def test_matches_window_oracle(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(1, 2, 8, 8)).astype(np.float32)
        out, arg = ops.maxpool2x2(Tensor(x))
        ref_out, ref_arg = maxpool2x2_naive(x)
        np.testing.assert_array_equal(out.data, ref_out)
        np.testing.assert_array_equal(arg, ref_arg)

    def test_odd_dims_rejected(self):
        with pytest.raises(ShapeError):
            ops.maxpool2x2(Tensor(np.zeros((1, 1, 5, 4), dtype=np.float32)))

    def test_backward_routes_to_argmax(self):
        rng = np.random.default_rng(10)
        x = rng.permutation(64).reshape(1, 1, 8, 8).astype(np.float32)
        out, arg = ops.maxpool2x2(Tensor(x))
        gout = rng.normal(size=out.shape).astype(np.float32)
        gx = ops.maxpool2x2_backward(arg, Tensor(gout))
        assert gx.shape == x.shape
        # nonzero exactly at the per-window maxima
        assert np.count_nonzero(gx.data) == out.data.size
        for i in range(4):
            for j in range(4):
                win = gx.data[0, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                assert win.ravel()[arg[0, 0, i, j]] == gout[0, 0, i, j]

    def test_adjoint_identity_fixed_argmax(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(2, 3, 8, 6))
        out, arg = ops.maxpool2x2(Tensor(x))
        y = rng.normal(size=out.shape)
        gx = ops.maxpool2x2_backward(arg, Tensor(y))
        assert float((out.data * y).sum()) == pytest.approx(
            float((x * gx.data).sum()), rel=1e-5
        )


class TestUpsample:
    def test_block_replication(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
        out = ops.upsample2x_nearest(x)
        expected = np.array(
            [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=np.float32
        )
        np.testing.assert_array_equal(out.data[0, 0], expected)

    def test_backward_of_ones_is_fours(self):
        g = ops.upsample2x_backward(Tensor(np.ones((1, 1, 4, 6), dtype=np.float32)))
        assert g.shape == (1, 1, 2, 3)
        assert np.all(g.data == 4.0)

    def test_adjoint_identity(self):
        rng = np.random.default_rng(23)
        x = rng.normal(size=(2, 2, 3, 5))
        up = ops.upsample2x_nearest(Tensor(x))
        y = rng.normal(size=up.shape)
        gx = ops.upsample2x_backward(Tensor(y))
        lhs = float((up.data * y).sum())
        rhs = float((x * gx.data).sum())
        assert lhs == pytest.approx(rhs, rel=1e-6)


class TestActivations:
    def test_sigmoid_at_zero(self):
        assert ops.sigmoid(Tensor(np.zeros(1))).data[0] == pytest.approx(0.5)

    def test_sigmoid_range_and_extremes(self):
        x = Tensor(np.array([-60.0, -5.0, 0.0, 5.0, 60.0], dtype=np.float32))
        y = ops.sigmoid(x)
        assert np.all(np.isfinite(y.data))
        assert y.data[0] >= 0.0 and y.data[-1] <= 1.0
        assert 0.0 < y.data[1] < y.data[2] < y.data[3] < 1.0

    def test_relu_values_and_grads(self):
        x = Tensor(np.array([-5.0, 0.0, 5.0], dtype=np.float32))
        y = ops.relu(x)
        np.testing.assert_array_equal(y.data, [0.0, 0.0, 5.0])
        g = ops.relu_backward(x, Tensor(np.ones(3, dtype=np.float32)))
        np.testing.assert_array_equal(g.data, [0.0, 0.0, 1.0])

    def test_sigmoid_grad_is_s_times_one_minus_s(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=16))
        y = ops.sigmoid(x)
        g = ops.sigmoid_backward(y, Tensor(np.ones(16)))
        np.testing.assert_allclose(g.data, y.data * (1 - y.data), rtol=1e-12)


class TestConcat:
    def test_two_singles_make_pair(self):
        a = Tensor(np.full((1, 1, 2, 2), 3.0, dtype=np.float32))
        b = Tensor(np.full((1, 1, 2, 2), 7.0, dtype=np.float32))
        out = ops.concat_channels(a, b)
        assert out.shape == (1, 2, 2, 2)
        np.testing.assert_array_equal(out.data[:, 0], a.data[:, 0])
        np.testing.assert_array_equal(out.data[:, 1], b.data[:, 0])

    def test_split_returns_sliced_grads(self):
        rng = np.random.default_rng(4)
        g = Tensor(rng.normal(size=(2, 5, 3, 3)).astype(np.float32))
        ga, gb = ops.split_channels(g, 2)
        np.testing.assert_array_equal(ga.data, g.data[:, :2])
        np.testing.assert_array_equal(gb.data, g.data[:, 2:])

    def test_spatial_mismatch_rejected(self):
        a = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32))
        b = Tensor(np.zeros((1, 1, 3, 2), dtype=np.float32))
        with pytest.raises(ShapeError):
            ops.concat_channels(a, b)

    @settings(max_examples=25, deadline=None)
    @given(
        ca=st.integers(1, 4),
        cb=st.integers(1, 4),
        h=st.integers(1, 5),
        w=st.integers(1, 5),
        seed=st.integers(0, 10_000),
    )
    def test_roundtrip_is_identity(self, ca, cb, h, w, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(2, ca, h, w)).astype(np.float32))
        b = Tensor(rng.normal(size=(2, cb, h, w)).astype(np.float32))
        joined = ops.concat_channels(a, b)
        back_a, back_b = ops.split_channels(joined, ca)
        np.testing.assert_array_equal(back_a.data, a.data)
        np.testing.assert_array_equal(back_b.data, b.data)

    def test_adjoint_identity(self):
        rng = np.random.default_rng(31)
        a = rng.normal(size=(1, 2, 4, 4))
        b = rng.normal(size=(1, 3, 4, 4))
        joined = ops.concat_channels(Tensor(a), Tensor(b))
        y = rng.normal(size=joined.shape)
        ga, gb = ops.split_channels(Tensor(y), 2)
        lhs = float((joined.data * y).sum())
        rhs = float((a * ga.data).sum() + (b * gb.data).sum())
        assert lhs == pytest.approx(rhs, rel=1e-6)


class TestPadToEven:
    def test_pads_odd_dims_only(self):
        x = Tensor(np.ones((1, 1, 5, 6), dtype=np.float32))
        out = ops.pad_to_even(x)
        assert out.shape == (1, 1, 6, 6)
        assert np.all(out.data[:, :, 5, :] == 0.0)
        assert np.all(out.data[:, :, :5, :6] == 1.0)

    def test_adjoint_identity(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 2, 5, 7))
        out = ops.pad_to_even(Tensor(x))
        y = rng.normal(size=out.shape)
        gx = ops.pad_to_even_backward(x.shape, Tensor(y))
        assert float((out.data * y).sum()) == pytest.approx(
            float((x * gx.data).sum()), rel=1e-6
        )
