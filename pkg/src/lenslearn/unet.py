"""Encoder-decoder reconstruction network.

Encoder stages halve H and W and double channels; decoder stages invert
that, each receiving the matching encoder output over a channel concat.
The working block is two 3x3 conv + ReLU layers followed by batchnorm,
with an optional identity residual when in/out channels match. Output is
a 1x1 conv squeezed through a sigmoid, so predictions live in (0, 1).
Decoder upsampling is nearest-neighbor x2 followed by a 3x3 conv.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .layers import BatchNorm2d, Conv2d, Layer, MaxPool2x2, ReLU, Sigmoid, Upsample2x
from .network import Network
from .tensor import Tensor, ShapeError


class ConfigError(ValueError):
    """Invalid network configuration."""


@dataclass
class UNetConfig:
    depth: int = 4
    base_channels: int = 16
    input_hw: int = 128
    in_channels: int = 1
    out_channels: int = 1
    residual_in_block: bool = True

    def validate(self) -> None:
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.input_hw % (1 << self.depth) != 0:
            raise ConfigError(
                f"input_hw {self.input_hw} is not divisible by 2^depth = {1 << self.depth}"
            )

    def stage_channels(self, k: int) -> int:
        """Channels after encoder stage k (1-based): base * 2^(k-1)."""
        return self.base_channels * (1 << (k - 1))


class DenseBlock(Layer):
    """conv3x3 -> ReLU -> conv3x3 -> ReLU (+ identity when shapes allow) -> BN."""

    def __init__(self, in_channels, out_channels, *, residual=True,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.conv1 = self.add_child(
            "conv1", Conv2d(in_channels, out_channels, 3, padding=1, rng=rng, dtype=dtype)
        )
        self.relu1 = self.add_child("relu1", ReLU())
        self.conv2 = self.add_child(
            "conv2", Conv2d(out_channels, out_channels, 3, padding=1, rng=rng, dtype=dtype)
        )
        self.relu2 = self.add_child("relu2", ReLU())
        self.bn = self.add_child("bn", BatchNorm2d(out_channels, dtype=dtype))
        self.residual = residual and in_channels == out_channels

    def forward(self, x: Tensor) -> Tensor:
        h = self.relu1.forward(self.conv1.forward(x))
        h = self.relu2.forward(self.conv2.forward(h))
        if self.residual:
            h = Tensor(h.data + x.data)
        return self.bn.forward(h)

    def backward(self, grad_out: Tensor) -> Tensor:
        g = self.bn.backward(grad_out)
        residual_g = g if self.residual else None
        g = self.conv1.backward(self.relu1.backward(self.conv2.backward(self.relu2.backward(g))))
        if residual_g is not None:
            g = Tensor(g.data + residual_g.data)
        return g


class UNet(Network):
    def __init__(self, cfg: UNetConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x554E4554)))

        self.enc_blocks = []
        self.pools = []
        ch = cfg.in_channels
        for k in range(1, cfg.depth + 1):
            out_ch = cfg.stage_channels(k)
            block = DenseBlock(ch, out_ch, residual=cfg.residual_in_block, rng=rng, dtype=dtype)
            self.add_child(f"enc{k}", block)
            self.enc_blocks.append(block)
            self.pools.append(MaxPool2x2())
            ch = out_ch

        self.bottleneck = self.add_child(
            "bottleneck",
            DenseBlock(ch, 2 * ch, residual=cfg.residual_in_block, rng=rng, dtype=dtype),
        )

        self.up_samplers = []
        self.up_convs = []
        self.dec_blocks = []
        ch = 2 * ch
        for k in range(cfg.depth, 0, -1):
            out_ch = cfg.stage_channels(k)
            self.up_samplers.append(Upsample2x())
            up_conv = Conv2d(ch, out_ch, 3, padding=1, rng=rng, dtype=dtype)
            self.add_child(f"dec{k}.up_conv", up_conv)
            self.up_convs.append(up_conv)
            block = DenseBlock(
                2 * out_ch, out_ch, residual=cfg.residual_in_block, rng=rng, dtype=dtype
            )
            self.add_child(f"dec{k}.block", block)
            self.dec_blocks.append(block)
            ch = out_ch

        self.head = self.add_child(
            "head", Conv2d(ch, cfg.out_channels, 1, padding=0, rng=rng, dtype=dtype)
        )
        self.out_sigmoid = Sigmoid()
        self._skip_channels = [cfg.stage_channels(k) for k in range(cfg.depth, 0, -1)]

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.input_hw \
                or x.shape[3] != cfg.input_hw:
            raise ShapeError(
                f"expected input (N, {cfg.in_channels}, {cfg.input_hw}, {cfg.input_hw}), "
                f"got {x.shape}"
            )
        skips = []
        h = x
        for block, pool in zip(self.enc_blocks, self.pools):
            s = block.forward(h)
            skips.append(s)
            h = pool.forward(s)
        h = self.bottleneck.forward(h)
        for up, conv, block in zip(self.up_samplers, self.up_convs, self.dec_blocks):
            h = conv.forward(up.forward(h))
            skip = skips.pop()
            if skip.shape[2:] != h.shape[2:]:
                raise ShapeError(
                    f"skip spatial dims {skip.shape} do not match decoder dims {h.shape}"
                )
            h = ops.concat_channels(skip, h)
            h = block.forward(h)
        z = self.head.forward(h)
        return self.out_sigmoid.forward(z)

    def backward(self, grad_out: Tensor) -> Tensor:
        return self.backward_from_logits(self.out_sigmoid.backward(grad_out))

    def backward_from_logits(self, grad_z: Tensor) -> Tensor:
        """Backward from the pre-sigmoid activation (fused-loss entry point)."""
        g = self.head.backward(grad_z)
        skip_grads = []
        for (up, conv, block, skip_ch) in zip(
            reversed(self.up_samplers),
            reversed(self.up_convs),
            reversed(self.dec_blocks),
            reversed(self._skip_channels),
        ):
            g = block.backward(g)
            g_skip, g = ops.split_channels(g, skip_ch)
            skip_grads.append(g_skip)
            g = up.backward(conv.backward(g))
        g = self.bottleneck.backward(g)
        for block, pool in zip(reversed(self.enc_blocks), reversed(self.pools)):
            g = Tensor(pool.backward(g).data + skip_grads.pop().data)
            g = block.backward(g)
        return g


def build_unet(cfg: UNetConfig, seed: int = 0, dtype=np.float32) -> UNet:
    return UNet(cfg, seed=seed, dtype=dtype)


def count_parameters(net: Network) -> int:
    return net.count_parameters()
