"""Batch normalization semantics: statistics, affine, modes, running stats."""

import numpy as np
import pytest

from lenslearn import ops
from lenslearn.tensor import Tensor, ShapeError


def test_train_mode_normalizes_per_channel():
    rng = np.random.default_rng(0)
    x = Tensor((rng.normal(2.0, 3.0, size=(4, 3, 8, 8))).astype(np.float32))
    s = ops.BatchNormState.for_channels(3)
    y = ops.batchnorm_forward(x, s)
    mean = y.data.mean(axis=(0, 2, 3))
    var = y.data.var(axis=(0, 2, 3))
    assert np.all(np.abs(mean) < 1e-6)
    assert np.all(np.abs(var - 1.0) < 1e-4)


def test_affine_applies_after_normalization():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(2, 2, 4, 4)).astype(np.float32))
    s0 = ops.BatchNormState.for_channels(2)
    xhat = ops.batchnorm_forward(x, s0, update_running=False)
    s = ops.BatchNormState.for_channels(2)
    s.gamma.data[:] = 2.0
    s.beta.data[:] = 3.0
    y = ops.batchnorm_forward(x, s, update_running=False)
    np.testing.assert_allclose(y.data, 2.0 * xhat.data + 3.0, rtol=1e-6)


def test_eval_mode_uses_running_stats_only():
    s = ops.BatchNormState.for_channels(1, mode="eval")
    s.running_mean.data[:] = 4.0
    s.running_var.data[:] = 9.0
    x = Tensor(np.full((1, 1, 2, 2), 7.0, dtype=np.float32))
    y = ops.batchnorm_forward(x, s)
    # (7 - 4) / sqrt(9 + eps) ~= 1
    assert y.data[0, 0, 0, 0] == pytest.approx(1.0, abs=1e-5)
    # output independent of batch content scale in eval mode
    x2 = Tensor(np.full((5, 1, 2, 2), 7.0, dtype=np.float32))
    y2 = ops.batchnorm_forward(x2, s)
    assert np.allclose(y2.data, y.data[0, 0, 0, 0])


def test_running_stats_update_with_momentum():
    rng = np.random.default_rng(2)
    x = Tensor((rng.normal(5.0, 2.0, size=(8, 1, 4, 4))).astype(np.float32))
    s = ops.BatchNormState.for_channels(1, momentum=0.1)
    ops.batchnorm_forward(x, s)
    batch_mean = x.data.mean()
    batch_var = x.data.var()
    assert s.running_mean.data[0] == pytest.approx(0.1 * batch_mean, rel=1e-5)
    assert s.running_var.data[0] == pytest.approx(0.9 + 0.1 * batch_var, rel=1e-5)


def test_single_element_channel_rejected_in_train():
    s = ops.BatchNormState.for_channels(2)
    with pytest.raises(ShapeError):
        ops.batchnorm_forward(Tensor(np.zeros((1, 2, 1, 1), dtype=np.float32)), s)


def test_update_running_flag_freezes_state():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(2, 2, 4, 4)).astype(np.float32))
    s = ops.BatchNormState.for_channels(2)
    before = (s.running_mean.data.copy(), s.running_var.data.copy())
    ops.batchnorm_forward(x, s, update_running=False)
    np.testing.assert_array_equal(s.running_mean.data, before[0])
    np.testing.assert_array_equal(s.running_var.data, before[1])
