"""Candidate operation primitives for cells.

Each OpKind maps to a factory `(channels, stride, affine, norm) -> nn.Module`.
All ops preserve spatial size at stride 1 and halve it at stride 2; channel
count is preserved. Convolutions carry no bias (normalization follows them).
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .search_space import OpKind

NORM_KINDS = ("batch", "group")


def make_norm(kind: str, channels: int, affine: bool) -> nn.Module:
    """Normalization factory. 'batch' uses batch statistics without running
    averages (deterministic given the batch in any mode); 'group' is a
    single-group GroupNorm, independent of batch composition, used where an
    oracle needs a pure per-sample function."""
    if kind == "batch":
        return nn.BatchNorm2d(channels, affine=affine, track_running_stats=False)
    if kind == "group":
        return nn.GroupNorm(1, channels, affine=affine)
    raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")


class ReLUConvBN(nn.Module):
    def __init__(self, c_in, c_out, kernel_size, stride, padding, affine, norm):
        super().__init__()
        self.op = nn.Sequential(
            nn.ReLU(),
            nn.Conv2d(c_in, c_out, kernel_size, stride=stride, padding=padding, bias=False),
            make_norm(norm, c_out, affine),
        )

    def forward(self, x):
        return self.op(x)


class SepConv(nn.Module):
    """Separable convolution applied twice (depthwise + pointwise, repeated),
    each block pre-activated."""

    def __init__(self, channels, kernel_size, stride, padding, affine, norm):
        super().__init__()
        c = channels
        self.op = nn.Sequential(
            nn.ReLU(),
            nn.Conv2d(c, c, kernel_size, stride=stride, padding=padding, groups=c, bias=False),
            nn.Conv2d(c, c, 1, bias=False),
            make_norm(norm, c, affine),
            nn.ReLU(),
            nn.Conv2d(c, c, kernel_size, stride=1, padding=padding, groups=c, bias=False),
            nn.Conv2d(c, c, 1, bias=False),
            make_norm(norm, c, affine),
        )

    def forward(self, x):
        return self.op(x)


class DilConv(nn.Module):
    """Single dilated depthwise + pointwise block, pre-activated."""

    def __init__(self, channels, kernel_size, stride, padding, affine, norm):
        super().__init__()
        c = channels
        self.op = nn.Sequential(
            nn.ReLU(),
            nn.Conv2d(
                c, c, kernel_size, stride=stride, padding=padding, dilation=2, groups=c, bias=False
            ),
            nn.Conv2d(c, c, 1, bias=False),
            make_norm(norm, c, affine),
        )

    def forward(self, x):
        return self.op(x)


class Identity(nn.Module):
    def forward(self, x):
        return x


class Zero(nn.Module):
    def __init__(self, stride):
        super().__init__()
        self.stride = stride

    def forward(self, x):
        if self.stride == 1:
            return x.mul(0.0)
        return x[:, :, :: self.stride, :: self.stride].mul(0.0)


class FactorizedReduce(nn.Module):
    """2x spatial reduction without information loss at a pixel-parity level:
    two stride-2 1x1 convs, the second on a one-pixel-shifted view, channel
    concatenated. Requires even input height/width."""

    def __init__(self, c_in, c_out, affine, norm):
        super().__init__()
        half = c_out // 2
        self.relu = nn.ReLU()
        self.conv_1 = nn.Conv2d(c_in, c_out - half, 1, stride=2, bias=False)
        self.conv_2 = nn.Conv2d(c_in, half, 1, stride=2, bias=False)
        self.norm = make_norm(norm, c_out, affine)

    def forward(self, x):
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ValueError(f"factorized reduce needs even spatial size, got {tuple(x.shape)}")
        x = self.relu(x)
        out = torch.cat([self.conv_1(x), self.conv_2(x[:, :, 1:, 1:])], dim=1)
        return self.norm(out)


def _pool_max(c, stride, affine, norm):
    return nn.MaxPool2d(3, stride=stride, padding=1)


def _pool_avg(c, stride, affine, norm):
    return nn.AvgPool2d(3, stride=stride, padding=1, count_include_pad=False)


def _skip(c, stride, affine, norm):
    if stride == 1:
        return Identity()
    return FactorizedReduce(c, c, affine=affine, norm=norm)


OPS = {
    OpKind.ZERO: lambda c, stride, affine, norm: Zero(stride),
    OpKind.SKIP_CONNECT: _skip,
    OpKind.MAX_POOL_3X3: _pool_max,
    OpKind.AVG_POOL_3X3: _pool_avg,
    OpKind.SEP_CONV_3X3: lambda c, s, a, n: SepConv(c, 3, s, 1, a, n),
    OpKind.SEP_CONV_5X5: lambda c, s, a, n: SepConv(c, 5, s, 2, a, n),
    OpKind.DIL_CONV_3X3: lambda c, s, a, n: DilConv(c, 3, s, 2, a, n),
    OpKind.DIL_CONV_5X5: lambda c, s, a, n: DilConv(c, 5, s, 4, a, n),
}


def build_op(op: OpKind, channels: int, stride: int, affine: bool, norm: str) -> nn.Module:
    return OPS[op](channels, stride, affine, norm)
