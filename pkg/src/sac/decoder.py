"""Stream fusion, waveform reconstruction, and the two auxiliary heads.

The two token streams' embeddings are concatenated, lifted to the 50 Hz
decoder rate by a small residual prenet, and rendered to audio through a
mirrored transposed-conv stack with a fixed 320x upsampling. A conv head
predicts the 50 Hz semantic features back out of the fused sequence, and
a mean/std-pooled MLP predicts the speaker embedding; both exist only to
shape training.
"""

from __future__ import annotations

import enum

import torch
import torch.nn.functional as F
from torch import nn

from sac.layers import ConvNeXtBlock, ResidualUnit, StridedConvTranspose1d

OUTPUT_RATE_HZ = 50.0
DECODER_STRIDES = (8, 5, 4, 2)  # 50 Hz -> 16 kHz
SAMPLES_PER_OUTPUT_FRAME = 320


def init_weights(m: nn.Module, mean: float = 0.0, std: float = 0.01) -> None:
    if isinstance(m, (nn.Conv1d, nn.ConvTranspose1d)):
        m.weight.data.normal_(mean, std)


class ReconstructionPattern(enum.Enum):
    """Which stream embeddings the decoder actually sees."""

    FULL = "full"
    SEMANTIC_ONLY = "semantic_only"
    ACOUSTIC_ONLY = "acoustic_only"

    @classmethod
    def parse(cls, name: str) -> "ReconstructionPattern":
        key = name.strip().lower().replace("-", "_")
        for pattern in cls:
            if pattern.value == key:
                return pattern
        raise ValueError(f"unknown reconstruction pattern {name!r}; expected full, semantic-only, or acoustic-only")


def mask_stream(
    a_q: torch.Tensor,
    s_q_up: torch.Tensor,
    pattern: ReconstructionPattern,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Zero out one stream's embeddings according to the pattern."""
    if pattern is ReconstructionPattern.SEMANTIC_ONLY:
        return torch.zeros_like(a_q), s_q_up
    if pattern is ReconstructionPattern.ACOUSTIC_ONLY:
        return a_q, torch.zeros_like(s_q_up)
    return a_q, s_q_up


class FusionPrenet(nn.Module):
    """Concatenate stream embeddings and lift them to the 50 Hz decoder rate."""

    def __init__(self, d_fuse: int, num_blocks: int = 2, kernel_size: int = 7):
        super().__init__()
        self.d_fuse = d_fuse
        self.blocks = nn.ModuleList(ConvNeXtBlock(d_fuse, kernel_size) for _ in range(num_blocks))

    def forward(self, a_q: torch.Tensor, s_q_up: torch.Tensor, input_rate: float) -> torch.Tensor:
        # a_q: [batch, t_ac, d_model], s_q_up: [batch, t_ac, d_sem] -> [batch, t50, d_fuse]
        if a_q.shape[-2] != s_q_up.shape[-2]:
            raise ValueError(
                f"stream frame counts differ: acoustic {a_q.shape[-2]} vs semantic {s_q_up.shape[-2]}"
            )
        ratio = OUTPUT_RATE_HZ / input_rate
        factor = int(round(ratio))
        if abs(ratio - factor) > 1e-9 or factor not in (1, 2):
            raise ValueError(f"input rate {input_rate} Hz cannot be lifted to {OUTPUT_RATE_HZ} Hz by an integer repeat")
        u = torch.cat([a_q, s_q_up], dim=-1)
        f = u.repeat_interleave(factor, dim=-2) if factor > 1 else u
        for block in self.blocks:
            f = block(f)
        return f


class WaveformDecoder(nn.Module):
    """Mirrored transposed-conv stack from 50 Hz features to 16 kHz samples.

    Conv weights start at N(0, 0.01) so a fresh decoder emits near-silence
    rather than broadband noise.
    """

    def __init__(self, d_fuse: int, channels: int = 256):
        super().__init__()
        ch = channels
        self.pre = nn.Conv1d(d_fuse, ch, 7, padding=3)
        ups: list[nn.Module] = []
        for s in DECODER_STRIDES:
            nxt = max(ch // 2, 16)
            ups += [nn.ELU(), StridedConvTranspose1d(ch, nxt, s), ResidualUnit(nxt)]
            ch = nxt
        self.up = nn.Sequential(*ups)
        self.output_conv = nn.Conv1d(ch, 1, 7, padding=3)
        self.apply(init_weights)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        # f: [batch, t50, d_fuse] -> [batch, t50 * 320] in (-1, 1)
        h = self.pre(f.transpose(1, 2))
        h = self.up(h)
        return torch.tanh(self.output_conv(F.elu(h))).squeeze(1)


class SemanticHead(nn.Module):
    """Three-layer conv head predicting 50 Hz semantic features from F."""

    def __init__(self, d_fuse: int, d_sem: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv1d(d_fuse, d_fuse, 3, padding=1),
            nn.ELU(),
            nn.Conv1d(d_fuse, d_fuse, 3, padding=1),
            nn.ELU(),
            nn.Conv1d(d_fuse, d_sem, 3, padding=1),
        )

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.net(f.transpose(1, 2)).transpose(1, 2)


def pool_mean_std(f: torch.Tensor) -> torch.Tensor:
    """Concatenated temporal mean and population std, [..., 2 * d].

    Exactly invariant to any permutation of the time axis.
    """
    if f.shape[-2] < 2:
        raise ValueError(f"need at least 2 frames for std pooling, got {f.shape[-2]}")
    mean = f.mean(dim=-2)
    std = f.std(dim=-2, correction=0)
    return torch.cat([mean, std], dim=-1)


class SpeakerProjector(nn.Module):
    """Two-layer MLP from pooled fused features to a speaker embedding."""

    def __init__(self, d_fuse: int, d_spk: int = 192, hidden: int = 256):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(2 * d_fuse, hidden), nn.ELU(), nn.Linear(hidden, d_spk))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.net(pool_mean_std(f))
