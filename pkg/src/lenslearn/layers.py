"""Layer objects: stateful wrappers over the functional ops.

Each layer caches whatever its backward pass needs during forward, routes
parameter gradients into the parameter tensors' grad buffers, and returns
the gradient w.r.t. its input from backward(). Composite layers register
children; parameter iteration follows declaration order.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Tensor, ShapeError


class Layer:
    """Base class with a declaration-ordered parameter/buffer/child registry."""

    def __init__(self):
        self._params = []     # list of (name, Tensor)
        self._buffers = []    # list of (name, Tensor)
        self._children = []   # list of (name, Layer)
        self.training = True

    def add_param(self, name: str, t: Tensor) -> Tensor:
        self._params.append((name, t))
        return t

    def add_buffer(self, name: str, t: Tensor) -> Tensor:
        self._buffers.append((name, t))
        return t

    def add_child(self, name: str, layer: "Layer") -> "Layer":
        self._children.append((name, layer))
        return layer

    def named_parameters(self, prefix: str = ""):
        for name, t in self._params:
            yield prefix + name, t
        for cname, child in self._children:
            yield from child.named_parameters(prefix + cname + ".")

    def named_buffers(self, prefix: str = ""):
        for name, t in self._buffers:
            yield prefix + name, t
        for cname, child in self._children:
            yield from child.named_buffers(prefix + cname + ".")

    def named_state(self, prefix: str = ""):
        """Parameters then buffers, per layer, in declaration order."""
        for name, t in self._params:
            yield prefix + name, t
        for name, t in self._buffers:
            yield prefix + name, t
        for cname, child in self._children:
            yield from child.named_state(prefix + cname + ".")

    def set_training(self, flag: bool) -> None:
        self.training = flag
        for _, child in self._children:
            child.set_training(flag)

    def set_stats_updates(self, flag: bool) -> None:
        """Enable/disable running-stat mutation (off for FD closures)."""
        if hasattr(self, "update_stats"):
            self.update_stats = flag
        for _, child in self._children:
            child.set_stats_updates(flag)

    def zero_grads(self) -> None:
        for _, t in self.named_parameters():
            t.zero_grad()

    def astype(self, dtype) -> "Layer":
        """In-place dtype conversion of all state (for float64 oracle runs)."""
        for _, t in self.named_state():
            t.data = t.data.astype(dtype)
            t.grad = None
        return self

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def backward(self, grad_out: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=0,
                 *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        k = kernel_size
        kernel = he_uniform(rng, (out_channels, in_channels, k, k), in_channels * k * k, dtype)
        self.params = ops.ConvParams(
            kernel=self.add_param("kernel", Tensor(kernel)),
            bias=self.add_param("bias", Tensor(np.zeros(out_channels, dtype=dtype))),
            stride=stride,
            padding=padding,
        )
        self._x = None

    def forward(self, x: Tensor) -> Tensor:
        self._x = x
        return ops.conv2d_forward(x, self.params)

    def backward(self, grad_out: Tensor) -> Tensor:
        gx, gk, gb = ops.conv2d_backward(self._x, self.params, grad_out)
        self.params.kernel.accumulate_grad(gk.data)
        self.params.bias.accumulate_grad(gb.data)
        return gx


class BatchNorm2d(Layer):
    def __init__(self, channels, *, epsilon=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.state = ops.BatchNormState.for_channels(
            channels, dtype=dtype, epsilon=epsilon, momentum=momentum
        )
        self.add_param("gamma", self.state.gamma)
        self.add_param("beta", self.state.beta)
        self.add_buffer("running_mean", self.state.running_mean)
        self.add_buffer("running_var", self.state.running_var)
        self.update_stats = True
        self._x = None

    def forward(self, x: Tensor) -> Tensor:
        self.state.mode = "train" if self.training else "eval"
        self._x = x
        return ops.batchnorm_forward(x, self.state, update_running=self.training and self.update_stats)

    def backward(self, grad_out: Tensor) -> Tensor:
        self.state.mode = "train" if self.training else "eval"
        gx, dgamma, dbeta = ops.batchnorm_backward(self._x, self.state, grad_out)
        self.state.gamma.accumulate_grad(dgamma.data)
        self.state.beta.accumulate_grad(dbeta.data)
        return gx


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._x = None

    def forward(self, x: Tensor) -> Tensor:
        self._x = x
        return ops.relu(x)

    def backward(self, grad_out: Tensor) -> Tensor:
        return ops.relu_backward(self._x, grad_out)


class Sigmoid(Layer):
    def __init__(self):
        super().__init__()
        self._y = None

    def forward(self, x: Tensor) -> Tensor:
        self._y = ops.sigmoid(x)
        return self._y

    def backward(self, grad_out: Tensor) -> Tensor:
        return ops.sigmoid_backward(self._y, grad_out)


class MaxPool2x2(Layer):
    def __init__(self):
        super().__init__()
        self._argmax = None
        self._x = None

    def forward(self, x: Tensor) -> Tensor:
        self._x = x
        out, self._argmax = ops.maxpool2x2(x)
        return out

    def backward(self, grad_out: Tensor) -> Tensor:
        return ops.maxpool2x2_backward(self._argmax, grad_out)


class Upsample2x(Layer):
    def forward(self, x: Tensor) -> Tensor:
        return ops.upsample2x_nearest(x)

    def backward(self, grad_out: Tensor) -> Tensor:
        return ops.upsample2x_backward(grad_out)


class PadToEven(Layer):
    def __init__(self):
        super().__init__()
        self._in_shape = None

    def forward(self, x: Tensor) -> Tensor:
        self._in_shape = x.shape
        return ops.pad_to_even(x)

    def backward(self, grad_out: Tensor) -> Tensor:
        return ops.pad_to_even_backward(self._in_shape, grad_out)


class GlobalAvgPool(Layer):
    """(N, C, H, W) -> (N, C) spatial mean."""

    def __init__(self):
        super().__init__()
        self._in_shape = None

    def forward(self, x: Tensor) -> Tensor:
        self._in_shape = x.shape
        return Tensor(x.data.mean(axis=(2, 3)))

    def backward(self, grad_out: Tensor) -> Tensor:
        n, c, h, w = self._in_shape
        g = np.broadcast_to(grad_out.data[:, :, None, None] / (h * w), self._in_shape)
        return Tensor(np.ascontiguousarray(g))


class Linear(Layer):
    def __init__(self, in_features, out_features, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.weight = self.add_param(
            "weight", Tensor(he_uniform(rng, (out_features, in_features), in_features, dtype))
        )
        self.bias = self.add_param("bias", Tensor(np.zeros(out_features, dtype=dtype)))
        self._x = None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise ShapeError(
                f"linear input shape {x.shape} does not match weight shape {self.weight.shape}"
            )
        self._x = x
        return Tensor(x.data @ self.weight.data.T + self.bias.data)

    def backward(self, grad_out: Tensor) -> Tensor:
        self.weight.accumulate_grad(grad_out.data.T @ self._x.data)
        self.bias.accumulate_grad(grad_out.data.sum(axis=0))
        return Tensor(grad_out.data @ self.weight.data)


class Sequential(Layer):
    """Straight-line chain; backward replays the layers in reverse."""

    def __init__(self, *layers: Layer):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(self.layers):
            self.add_child(str(i), layer)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out: Tensor) -> Tensor:
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out
