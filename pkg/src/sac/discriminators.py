"""Waveform discriminators: multi-period and multi-scale STFT.

Each sub-discriminator returns one score map plus its intermediate
feature maps (the score map included last) for feature matching. Widths
scale by a single factor so desk-size runs stay cheap.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.parametrizations import weight_norm

LRELU_SLOPE = 0.1
DEFAULT_PERIODS = (2, 3, 5, 7, 11)
DEFAULT_FFT_SIZES = (512, 1024, 2048)


class DiscriminatorOutput(NamedTuple):
    scores: list[torch.Tensor]
    features: list[list[torch.Tensor]]


def pad_to_period(x: torch.Tensor, period: int) -> torch.Tensor:
    """Right-zero-pad the time axis to a multiple of the period."""
    n_pad = (-x.shape[-1]) % period
    return F.pad(x, (0, n_pad)) if n_pad else x


def _scaled(base: int, width_scale: float) -> int:
    return max(int(base * width_scale), 4)


class PeriodDiscriminator(nn.Module):
    """2-D conv stack over the waveform folded into [frames x period]."""

    def __init__(self, period: int, width_scale: float = 1.0):
        super().__init__()
        self.period = period
        chans = [_scaled(c, width_scale) for c in (32, 128, 512, 1024, 1024)]
        convs = []
        ch = 1
        for i, nxt in enumerate(chans):
            stride = (3, 1) if i < 4 else (1, 1)
            convs.append(weight_norm(nn.Conv2d(ch, nxt, (5, 1), stride, padding=(2, 0))))
            ch = nxt
        self.convs = nn.ModuleList(convs)
        self.post = weight_norm(nn.Conv2d(ch, 1, (3, 1), padding=(1, 0)))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        h = pad_to_period(x, self.period)
        h = h.view(h.shape[0], 1, -1, self.period)
        features = []
        for conv in self.convs:
            h = F.leaky_relu(conv(h), LRELU_SLOPE)
            features.append(h)
        score = self.post(h)
        features.append(score)
        return score, features


class MultiPeriodDiscriminator(nn.Module):
    def __init__(self, periods: Sequence[int] = DEFAULT_PERIODS, width_scale: float = 1.0):
        super().__init__()
        if len(set(periods)) != len(periods) or any(p < 1 for p in periods):
            raise ValueError(f"periods must be distinct positive ints, got {periods}")
        self.subs = nn.ModuleList(PeriodDiscriminator(p, width_scale) for p in periods)

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        # x: [batch, time]
        if x.dim() == 2:
            x = x.unsqueeze(1)
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        scores, features = [], []
        for sub in self.subs:
            s, f = sub(x)
            scores.append(s)
            features.append(f)
        return DiscriminatorOutput(scores, features)


class STFTDiscriminator(nn.Module):
    """2-D conv stack over the complex STFT split into real/imag channels."""

    def __init__(self, fft_size: int, hop: int, width_scale: float = 1.0):
        super().__init__()
        self.fft_size = fft_size
        self.hop = hop
        ch = _scaled(32, width_scale)
        self.convs = nn.ModuleList(
            [
                weight_norm(nn.Conv2d(2, ch, (3, 9), padding=(1, 4))),
                weight_norm(nn.Conv2d(ch, ch, (3, 9), stride=(1, 2), padding=(1, 4))),
                weight_norm(nn.Conv2d(ch, ch, (3, 9), stride=(1, 2), padding=(1, 4))),
                weight_norm(nn.Conv2d(ch, ch, (3, 9), stride=(1, 2), padding=(1, 4))),
                weight_norm(nn.Conv2d(ch, ch, (3, 3), padding=(1, 1))),
            ]
        )
        self.post = weight_norm(nn.Conv2d(ch, 1, (3, 3), padding=(1, 1)))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        if x.shape[-1] < self.fft_size:
            raise ValueError(f"signal of {x.shape[-1]} samples is shorter than the {self.fft_size}-sample FFT")
        window = torch.hann_window(self.fft_size, periodic=True, dtype=x.dtype, device=x.device)
        spec = torch.stft(
            x,
            n_fft=self.fft_size,
            hop_length=self.hop,
            window=window,
            center=True,
            pad_mode="reflect",
            return_complex=True,
        )
        h = torch.stack([spec.real, spec.imag], dim=1)  # [batch, 2, bins, frames]
        features = []
        for conv in self.convs:
            h = F.leaky_relu(conv(h), LRELU_SLOPE)
            features.append(h)
        score = self.post(h)
        features.append(score)
        return score, features


class MultiScaleSTFTDiscriminator(nn.Module):
    def __init__(self, fft_sizes: Sequence[int] = DEFAULT_FFT_SIZES, width_scale: float = 1.0):
        super().__init__()
        if len(fft_sizes) == 0:
            raise ValueError("need at least one STFT scale")
        self.subs = nn.ModuleList(STFTDiscriminator(fft, fft // 4, width_scale) for fft in fft_sizes)

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        if x.dim() == 3:
            x = x.squeeze(1)
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        scores, features = [], []
        for sub in self.subs:
            s, f = sub(x)
            scores.append(s)
            features.append(f)
        return DiscriminatorOutput(scores, features)


class DiscriminatorSet(nn.Module):
    """Both discriminator families behind one forward call."""

    def __init__(
        self,
        periods: Sequence[int] = DEFAULT_PERIODS,
        fft_sizes: Sequence[int] = DEFAULT_FFT_SIZES,
        width_scale: float = 1.0,
    ):
        super().__init__()
        self.mpd = MultiPeriodDiscriminator(periods, width_scale)
        self.msstft = MultiScaleSTFTDiscriminator(fft_sizes, width_scale)

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        a = self.mpd(x)
        b = self.msstft(x)
        return DiscriminatorOutput(a.scores + b.scores, a.features + b.features)
