"""Trainable acoustic stream: strided conv encoder plus factorized quantization.

The encoder downsamples 16 kHz audio by a product of strides of 640
(25 Hz frames) or 320 (50 Hz frames). Quantization happens in a small
code space reached through a linear down-projection; the selected
entries ride back up through the straight-through estimator so encoder
gradients survive the discrete step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn

from sac.audio import CANONICAL_SAMPLE_RATE, Waveform
from sac.layers import ResidualUnit, StridedConv1d
from sac.quantize import Codebook, FactorizedProjection, quantize, straight_through

VALID_REDUCTIONS = (320, 640)


@dataclass(frozen=True)
class AcousticEncoderConfig:
    strides: tuple[int, ...] = (2, 2, 4, 5, 8)
    base_channels: int = 32
    d_model: int = 256

    def __post_init__(self) -> None:
        if any(s < 1 for s in self.strides):
            raise ValueError(f"strides must be positive, got {self.strides}")
        if self.reduction not in VALID_REDUCTIONS:
            raise ValueError(
                f"stride product must be one of {VALID_REDUCTIONS}, got {self.reduction} from {self.strides}"
            )
        if self.base_channels < 1 or self.d_model < 1:
            raise ValueError("base_channels and d_model must be positive")

    @property
    def reduction(self) -> int:
        return math.prod(self.strides)

    @property
    def frame_rate(self) -> int:
        return CANONICAL_SAMPLE_RATE // self.reduction  # 25 or 50


class AcousticEncoder(nn.Module):
    """Stacked residual + strided conv blocks, doubling channels per stage."""

    def __init__(self, config: AcousticEncoderConfig):
        super().__init__()
        self.config = config
        ch = config.base_channels
        layers: list[nn.Module] = [nn.Conv1d(1, ch, 7, padding=3)]
        for s in config.strides:
            nxt = min(ch * 2, config.d_model)
            layers += [ResidualUnit(ch), nn.ELU(), StridedConv1d(ch, nxt, s)]
            ch = nxt
        layers += [nn.ELU(), nn.Conv1d(ch, config.d_model, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [batch, time] -> [batch, time / reduction, d_model]
        if x.dim() == 2:
            x = x.unsqueeze(1)
        if x.shape[-1] % self.config.reduction:
            raise ValueError(
                f"input length {x.shape[-1]} is not divisible by the {self.config.reduction}x reduction; "
                "right-pad with zeros first"
            )
        return self.net(x).transpose(1, 2)


def encode_acoustic(w: Waveform, encoder: AcousticEncoder) -> torch.Tensor:
    """Frame-level representations [t_ac, d_model] of one waveform."""
    x = torch.from_numpy(w.samples.astype("float32"))[None]
    return encoder(x)[0]


class AcousticQuantizeResult(NamedTuple):
    tokens: torch.Tensor  # [..., t_ac] int64
    embeddings: torch.Tensor  # [..., t_ac, d_model], up-projected straight-through codes
    code: torch.Tensor  # [..., t_ac, d_code], encoder output in code space
    code_q: torch.Tensor  # [..., t_ac, d_code], selected codebook entries


def quantize_acoustic(
    a: torch.Tensor,
    proj: FactorizedProjection,
    cb_ac: Codebook,
    update_usage: bool = True,
) -> AcousticQuantizeResult:
    """Project to code space, quantize, and lift back to model width.

    Gradient reaches the encoder through the straight-through path and
    the codebook through the selected entries.
    """
    z = proj.down(a)
    flat = z.reshape(-1, z.shape[-1])
    idx, z_q_flat = quantize(flat, cb_ac, update_usage=update_usage)
    z_q = z_q_flat.reshape(z.shape)
    a_q = proj.up(straight_through(z, z_q))
    tokens = idx.reshape(z.shape[:-1])
    return AcousticQuantizeResult(tokens, a_q, z, z_q)
