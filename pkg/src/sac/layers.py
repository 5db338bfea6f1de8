"""Shared convolutional building blocks.

Strided blocks keep length arithmetic exact: a stride-s downsampling layer
maps T samples to T / s frames (T divisible by s), and its transposed
counterpart maps T frames back to exactly T * s samples.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class ConvNeXtBlock(nn.Module):
    """Depthwise conv + pre-norm pointwise MLP with a residual path.

    The closing pointwise layer is zero-initialized, so a freshly built
    block is an exact identity.
    """

    def __init__(self, dim: int, kernel_size: int = 7, expansion: int = 3):
        super().__init__()
        self.dwconv = nn.Conv1d(dim, dim, kernel_size, padding=kernel_size // 2, groups=dim)
        self.norm = nn.LayerNorm(dim)
        self.pw_in = nn.Linear(dim, expansion * dim)
        self.pw_out = nn.Linear(expansion * dim, dim)
        nn.init.zeros_(self.pw_out.weight)
        nn.init.zeros_(self.pw_out.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [batch, time, channels]
        h = self.dwconv(x.transpose(1, 2)).transpose(1, 2)
        h = self.pw_out(F.gelu(self.pw_in(self.norm(h))))
        return x + h


class StridedConv1d(nn.Module):
    """Downsampling conv padded so an s-divisible input shrinks exactly s-fold."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, kernel_size: int | None = None):
        super().__init__()
        kernel_size = kernel_size or 2 * stride
        if kernel_size < stride:
            raise ValueError(f"kernel_size {kernel_size} must be >= stride {stride}")
        self.conv = nn.Conv1d(in_channels, out_channels, kernel_size, stride=stride)
        pad = kernel_size - stride
        self._left = pad // 2
        self._right = pad - pad // 2

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.pad(x, (self._left, self._right)))


class StridedConvTranspose1d(nn.Module):
    """Upsampling transposed conv trimmed to exactly stride x input length."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, kernel_size: int | None = None):
        super().__init__()
        kernel_size = kernel_size or 2 * stride
        if kernel_size < stride:
            raise ValueError(f"kernel_size {kernel_size} must be >= stride {stride}")
        self.conv = nn.ConvTranspose1d(in_channels, out_channels, kernel_size, stride=stride)
        trim = kernel_size - stride
        self._left = trim // 2
        self._right = trim - trim // 2

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.conv(x)
        return y[..., self._left : y.shape[-1] - self._right]


class ResidualUnit(nn.Module):
    """Pre-activation residual pair: wide conv then 1x1, ELU before each."""

    def __init__(self, channels: int, kernel_size: int = 3, dilation: int = 1):
        super().__init__()
        pad = dilation * (kernel_size - 1) // 2
        self.conv_wide = nn.Conv1d(channels, channels, kernel_size, padding=pad, dilation=dilation)
        self.conv_1x1 = nn.Conv1d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv_wide(F.elu(x))
        h = self.conv_1x1(F.elu(h))
        return x + h
