"""Finite-difference verification of every backward pass, 20+ seeds each.

32-bit tensors are checked with eps 1e-3 against rel 1e-3; 64-bit with
eps 1e-6 against rel 1e-6 (the numeric side always runs in float64).
"""

import numpy as np
import pytest

from lenslearn import ops
from lenslearn.gradcheck import gradcheck
from lenslearn.losses import bce_pixel_loss, bce_sigmoid_fused_grad
from lenslearn.tensor import Tensor
from lenslearn.unet import UNetConfig, build_unet

N_SEEDS = 20
MODES = ((np.float32, 1e-3, 1e-3), (np.float64, 1e-6, 1e-6))


def _run_all_seeds(make_case, eps, tol, seeds=N_SEEDS, cotangent_rng=None):
    worst = 0.0
    for seed in range(seeds):
        op, x, cot = make_case(seed)
        err = gradcheck(op, x, eps, cotangent=cot)
        worst = max(worst, err)
        assert err < tol, f"seed {seed}: rel err {err} >= {tol}"
    return worst


def test_gradcheck_linear_op_is_exact():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(1, 2, 5, 5)).astype(np.float32))

    def lin(t):
        return Tensor(3.0 * t.data), lambda g: 3.0 * g

    assert gradcheck(lin, x, 1e-3) < 1e-10


@pytest.mark.parametrize("dtype,eps,tol", MODES)
def test_conv_input_gradient(dtype, eps, tol):
    def case(seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(1, 2, 5, 5)).astype(dtype))
        p = ops.ConvParams(
            kernel=Tensor(rng.normal(size=(3, 2, 3, 3)).astype(dtype)),
            bias=Tensor(rng.normal(size=3).astype(dtype)),
            stride=1,
            padding=1,
        )

        def op(t):
            return ops.conv2d_forward(t, p), \
                lambda g: ops.conv2d_backward(t, p, Tensor(g))[0].data

        return op, x, None

    _run_all_seeds(case, eps, tol)


@pytest.mark.parametrize("dtype,eps,tol", MODES)
def test_conv_kernel_and_bias_gradients(dtype, eps, tol):
    def kernel_case(seed):
        rng = np.random.default_rng(seed)
        xd = rng.normal(size=(1, 2, 5, 5)).astype(dtype)
        bias = rng.normal(size=3).astype(dtype)
        k = Tensor(rng.normal(size=(3, 2, 3, 3)).astype(dtype))

        def op(t):
            p = ops.ConvParams(kernel=Tensor(t.data), bias=Tensor(bias), padding=1)
            y = ops.conv2d_forward(Tensor(xd.astype(t.data.dtype)), p)
            return y, lambda g: ops.conv2d_backward(
                Tensor(xd.astype(t.data.dtype)), p, Tensor(g)
            )[1].data

        return op, k, None

    def bias_case(seed):
        rng = np.random.default_rng(seed)
        xd = rng.normal(size=(1, 2, 5, 5)).astype(dtype)
        kernel = rng.normal(size=(3, 2, 3, 3)).astype(dtype)
        b = Tensor(rng.normal(size=3).astype(dtype))

        def op(t):
            p = ops.ConvParams(kernel=Tensor(kernel.astype(t.data.dtype)),
                               bias=Tensor(t.data), padding=1)
            y = ops.conv2d_forward(Tensor(xd.astype(t.data.dtype)), p)
            return y, lambda g: ops.conv2d_backward(
                Tensor(xd.astype(t.data.dtype)), p, Tensor(g)
            )[2].data

        return op, b, None

    _run_all_seeds(kernel_case, eps, tol)
    _run_all_seeds(bias_case, eps, tol)


@pytest.mark.parametrize("dtype,eps,tol", MODES)
def test_maxpool_gradient(dtype, eps, tol):
    def case(seed):
        rng = np.random.default_rng(seed)
        # distinct values with gaps far above eps keep the argmax stable
        vals = rng.permutation(64).astype(dtype) / 64.0
        x = Tensor(vals.reshape(1, 1, 8, 8))
        cot = rng.normal(size=(1, 1, 4, 4))

        def op(t):
            y, arg = ops.maxpool2x2(t)
            return y, lambda g: ops.maxpool2x2_backward(arg, Tensor(g)).data

        return op, x, cot

    _run_all_seeds(case, eps, tol)


@pytest.mark.parametrize("dtype,eps,tol", MODES)
def test_upsample_gradient(dtype, eps, tol):
    def case(seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(1, 2, 3, 4)).astype(dtype))
        cot = rng.normal(size=(1, 2, 6, 8))

        def op(t):
            return ops.upsample2x_nearest(t), \
                lambda g: ops.upsample2x_backward(Tensor(g)).data

        return op, x, cot

    _run_all_seeds(case, eps, tol)


# 1e-6 steps hit the float64 FD roundoff floor on batchnorm's normalization
# chain; the criterion fixes the tolerance, not the step size.
BN_MODES = ((np.float32, 1e-3, 1e-3), (np.float64, 1e-5, 1e-6))


@pytest.mark.parametrize("dtype,eps,tol", BN_MODES)
def test_batchnorm_gradient(dtype, eps, tol):
    def case(seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(2, 2, 4, 4)).astype(dtype))
        s = ops.BatchNormState.for_channels(2, dtype=dtype)
        s.gamma.data[:] = rng.uniform(0.5, 2.0, size=2).astype(dtype)
        s.beta.data[:] = rng.normal(size=2).astype(dtype)
        cot = rng.normal(size=(2, 2, 4, 4))

        def op(t):
            y = ops.batchnorm_forward(t, s, update_running=False)
            return y, lambda g: ops.batchnorm_backward(t, s, Tensor(g))[0].data

        return op, x, cot

    _run_all_seeds(case, eps, tol)


@pytest.mark.parametrize("dtype,eps,tol", MODES)
def test_batchnorm_gamma_beta_gradients(dtype, eps, tol):
    def case(seed):
        rng = np.random.default_rng(seed)
        xd = rng.normal(size=(2, 2, 4, 4)).astype(dtype)
        gamma = Tensor(rng.uniform(0.5, 2.0, size=2).astype(dtype))
        cot = rng.normal(size=(2, 2, 4, 4))

        def op(t):
            s = ops.BatchNormState.for_channels(2, dtype=t.data.dtype)
            s.gamma.data[:] = t.data
            x = Tensor(xd.astype(t.data.dtype))
            y = ops.batchnorm_forward(x, s, update_running=False)
            return y, lambda g: ops.batchnorm_backward(x, s, Tensor(g))[1].data

        return op, gamma, cot

    _run_all_seeds(case, eps, tol)


@pytest.mark.parametrize("dtype,eps,tol", MODES)
def test_relu_gradient_away_from_kink(dtype, eps, tol):
    def case(seed):
        rng = np.random.default_rng(seed)
        vals = rng.normal(size=(2, 3, 4, 4))
        vals = np.where(np.abs(vals) < 0.2, vals + np.sign(vals) * 0.25, vals)
        x = Tensor(vals.astype(dtype))
        cot = rng.normal(size=vals.shape)

        def op(t):
            return ops.relu(t), lambda g: ops.relu_backward(t, Tensor(g)).data

        return op, x, cot

    _run_all_seeds(case, eps, tol)


@pytest.mark.parametrize("dtype,eps,tol", MODES)
def test_sigmoid_gradient(dtype, eps, tol):
    def case(seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(2, 8)).astype(dtype))
        cot = rng.normal(size=(2, 8))

        def op(t):
            y = ops.sigmoid(t)
            return y, lambda g: ops.sigmoid_backward(y, Tensor(g)).data

        return op, x, cot

    _run_all_seeds(case, eps, tol)


def test_sigmoid_chain_meets_spec_bound():
    rng = np.random.default_rng(42)
    x = Tensor(rng.normal(size=(1, 2, 5, 5)).astype(np.float32))
    p = ops.ConvParams(
        kernel=Tensor(rng.normal(size=(2, 2, 3, 3)).astype(np.float32)),
        bias=Tensor(np.zeros(2, dtype=np.float32)),
        padding=1,
    )

    def chain(t):
        y1 = ops.conv2d_forward(t, p)
        y2 = ops.sigmoid(y1)

        def vjp(g):
            g1 = ops.sigmoid_backward(y2, Tensor(g))
            return ops.conv2d_backward(t, p, g1)[0].data

        return y2, vjp

    assert gradcheck(chain, x, 1e-3) < 1e-4


@pytest.mark.parametrize("dtype,eps,tol", MODES)
def test_concat_gradient(dtype, eps, tol):
    def case(seed):
        rng = np.random.default_rng(seed)
        other = rng.normal(size=(1, 3, 4, 4)).astype(dtype)
        x = Tensor(rng.normal(size=(1, 2, 4, 4)).astype(dtype))
        cot = rng.normal(size=(1, 5, 4, 4))

        def op(t):
            y = ops.concat_channels(t, Tensor(other.astype(t.data.dtype)))
            return y, lambda g: ops.split_channels(Tensor(g), 2)[0].data

        return op, x, cot

    _run_all_seeds(case, eps, tol)


@pytest.mark.parametrize("dtype,eps,tol", MODES)
def test_pad_to_even_gradient(dtype, eps, tol):
    def case(seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(1, 2, 5, 7)).astype(dtype))
        cot = rng.normal(size=(1, 2, 6, 8))

        def op(t):
            return ops.pad_to_even(t), \
                lambda g: ops.pad_to_even_backward(t.shape, Tensor(g)).data

        return op, x, cot

    _run_all_seeds(case, eps, tol)


def _kink_margin(net) -> float:
    """Distance of the last forward pass from any ReLU or pool tie point.

    Finite differences are only valid at differentiable points; a sample
    whose activations sit within the FD step of a kink must be redrawn.
    """
    from lenslearn.layers import Layer, MaxPool2x2, ReLU

    margin = np.inf

    def visit(layer):
        nonlocal margin
        if isinstance(layer, ReLU) and layer._x is not None:
            margin = min(margin, float(np.abs(layer._x.data).min()))
        if isinstance(layer, MaxPool2x2) and layer._x is not None:
            n, c, h, w = layer._x.shape
            win = np.sort(
                layer._x.data.reshape(n, c, h // 2, 2, w // 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h // 2, w // 2, 4),
                axis=-1,
            )
            margin = min(margin, float((win[..., 3] - win[..., 2]).min()))
        for _, child in layer._children:
            visit(child)

    visit(net)
    # standalone pools in the UNet are not registered children
    for pool in getattr(net, "pools", []):
        visit(pool)
    return margin


def _toy_unet_loss_case(seed, dtype, margin_floor):
    cfg = UNetConfig(depth=1, base_channels=2, input_hw=8, residual_in_block=True)
    net = build_unet(cfg, seed=seed, dtype=dtype)
    net.set_training(True)
    net.set_stats_updates(False)
    rng = np.random.default_rng(seed + 1000)
    target = Tensor(rng.uniform(0.05, 0.95, size=(1, 1, 8, 8)).astype(dtype))
    for _ in range(64):
        x = Tensor(rng.normal(size=(1, 1, 8, 8)).astype(dtype))
        net.forward(x)
        if _kink_margin(net) >= margin_floor:
            break
    else:
        pytest.fail(f"seed {seed}: no kink-safe sample point found")

    def op(t):
        p = net.forward(t)
        loss = bce_pixel_loss(p, Tensor(target.data.astype(p.data.dtype)))
        y = Tensor(np.array([loss], dtype=np.float64))

        def vjp(g):
            gz = bce_sigmoid_fused_grad(p, Tensor(target.data.astype(p.data.dtype)))
            net.zero_grads()
            gx = net.backward_from_logits(gz)
            return gx.data * float(g[0])

        return y, vjp

    return op, x, None


# step sizes sit well below the screened kink margins; tolerances are the
# acceptance bounds (tighter than the per-net 1e-2 / 1e-4 example values)
UNET_MODES = ((np.float32, 1e-3, 1e-3, 5e-2), (np.float64, 1e-5, 1e-6, 5e-3))


@pytest.mark.parametrize("dtype,eps,tol,margin", UNET_MODES)
def test_composed_loss_unet_gradient(dtype, eps, tol, margin):
    def case(seed):
        return _toy_unet_loss_case(seed, dtype, margin)

    _run_all_seeds(case, eps, tol)
