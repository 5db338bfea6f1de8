"""The full dual-stream codec model.

Bundles the frozen semantic provider and codebook, the trainable
adapter/encoder/quantizer/decoder stack, and the frozen speaker encoder
that supplies supervision targets. Waveform-level helpers pad input to a
1280-sample boundary so 50 Hz features, 12.5 Hz pooling groups, and both
stride products stay aligned, and trim the decode back to the original
length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import torch
from torch import nn

from sac.acoustic import AcousticEncoder, AcousticEncoderConfig, quantize_acoustic
from sac.audio import CANONICAL_SAMPLE_RATE, Waveform, pad_to_multiple
from sac.decoder import (
    FusionPrenet,
    ReconstructionPattern,
    SemanticHead,
    SpeakerProjector,
    WaveformDecoder,
    mask_stream,
)
from sac.providers import SemanticProvider, SurrogateSemanticEncoder, SurrogateSpeakerEncoder
from sac.quantize import Codebook, FactorizedProjection
from sac.semantic import SEMANTIC_RATE_HZ, SemanticAdapter, pool_to_semantic_rate, tokenize_semantic

# LCM of both stride products and the 4-frame pooling group (4 * 320).
ALIGN_SAMPLES = 1280


@dataclass(frozen=True)
class SacModelConfig:
    sample_rate: int = 16000
    strides: tuple[int, ...] = (2, 2, 4, 5, 8)
    base_channels: int = 32
    d_model: int = 256
    d_code: int = 8
    k_ac: int = 16384
    k_sem: int = 16384
    d_sem: int = 256
    adapter_blocks: int = 2
    prenet_blocks: int = 2
    decoder_channels: int = 256
    d_spk: int = 192
    speaker_hidden: int = 256
    semantic_seed: int = 1234
    speaker_seed: int = 4321
    codebook_seed: int = 5678
    init_seed: int = 2024

    def __post_init__(self) -> None:
        if self.sample_rate != CANONICAL_SAMPLE_RATE:
            raise ValueError(f"only {CANONICAL_SAMPLE_RATE} Hz is supported, got {self.sample_rate}")

    @property
    def acoustic(self) -> AcousticEncoderConfig:
        return AcousticEncoderConfig(self.strides, self.base_channels, self.d_model)

    @property
    def reduction(self) -> int:
        return self.acoustic.reduction

    @property
    def frame_rate(self) -> int:
        return self.acoustic.frame_rate

    @property
    def d_fuse(self) -> int:
        return self.d_model + self.d_sem


class TrainForward(NamedTuple):
    """Everything one optimization step needs from the generator forward."""

    x_hat: torch.Tensor  # [batch, time]
    s_c: torch.Tensor  # [batch, t50, d_sem] provider features (no grad)
    sem_pred: torch.Tensor  # [batch, t50, d_sem]
    spk_target: torch.Tensor  # [batch, d_spk] (no grad)
    spk_pred: torch.Tensor  # [batch, d_spk]
    code: torch.Tensor  # [batch, t_ac, d_code]
    code_q: torch.Tensor  # [batch, t_ac, d_code]
    sem_tokens: torch.Tensor  # [batch, t12.5]
    ac_tokens: torch.Tensor  # [batch, t_ac]


class EncodeResult(NamedTuple):
    semantic_tokens: np.ndarray
    acoustic_tokens: np.ndarray
    original_length: int


class SacModel(nn.Module):
    """Dual-stream encoder/quantizer/decoder with frozen providers."""

    def __init__(
        self,
        config: SacModelConfig = SacModelConfig(),
        semantic_provider: Optional[SemanticProvider] = None,
        semantic_codebook: Optional[Codebook] = None,
    ):
        super().__init__()
        self.config = config
        if semantic_provider is None:
            semantic_provider = SurrogateSemanticEncoder(config.d_sem, config.semantic_seed)
        if semantic_provider.d_sem != config.d_sem:
            raise ValueError(f"provider d_sem {semantic_provider.d_sem} does not match config d_sem {config.d_sem}")
        # Module providers register as a submodule; file-backed ones stay a plain attribute.
        if isinstance(semantic_provider, nn.Module):
            self.semantic_provider = semantic_provider
            self._file_provider = None
        else:
            self.semantic_provider = None
            self._file_provider = semantic_provider
        if semantic_codebook is None:
            semantic_codebook = Codebook(config.k_sem, config.d_sem, config.codebook_seed).freeze()
        if semantic_codebook.code_dim != config.d_sem or semantic_codebook.num_entries != config.k_sem:
            raise ValueError(
                f"semantic codebook is {semantic_codebook.num_entries}x{semantic_codebook.code_dim}, "
                f"config wants {config.k_sem}x{config.d_sem}"
            )
        self.semantic_codebook = semantic_codebook.freeze()
        self.speaker_encoder = SurrogateSpeakerEncoder(config.d_spk, config.speaker_seed)

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.init_seed)
            self.adapter = SemanticAdapter(config.d_sem, config.adapter_blocks)
            self.acoustic_encoder = AcousticEncoder(config.acoustic)
            self.projection = FactorizedProjection(config.d_model, config.d_code)
            self.acoustic_codebook = Codebook(config.k_ac, config.d_code, config.codebook_seed + 1)
            self.prenet = FusionPrenet(config.d_fuse, config.prenet_blocks)
            self.waveform_decoder = WaveformDecoder(config.d_fuse, config.decoder_channels)
            self.semantic_head = SemanticHead(config.d_fuse, config.d_sem)
            self.speaker_projector = SpeakerProjector(config.d_fuse, config.d_spk, config.speaker_hidden)

    @property
    def provider(self) -> SemanticProvider:
        return self.semantic_provider if self.semantic_provider is not None else self._file_provider

    @property
    def frame_rate(self) -> int:
        return self.config.frame_rate

    def set_semantic_codebook(self, cb: Codebook) -> None:
        if cb.code_dim != self.config.d_sem or cb.num_entries != self.config.k_sem:
            raise ValueError(
                f"codebook is {cb.num_entries}x{cb.code_dim}, config wants {self.config.k_sem}x{self.config.d_sem}"
            )
        with torch.no_grad():
            self.semantic_codebook.entries.copy_(cb.entries)
            self.semantic_codebook.usage.zero_()
        self.semantic_codebook.freeze()

    def extract_semantic_batch(self, x: torch.Tensor, utterance_ids=None) -> torch.Tensor:
        """Provider features [batch, t50, d_sem] for a batch of equal-length signals."""
        if isinstance(self.provider, SurrogateSemanticEncoder):
            return self.provider(x)
        ids = utterance_ids or [None] * x.shape[0]
        rows = [self.provider.extract(Waveform(x[i].cpu().numpy()), ids[i]) for i in range(x.shape[0])]
        return torch.stack(rows)

    def semantic_embeddings(self, sem_tokens: torch.Tensor) -> torch.Tensor:
        """Adapter output [batch, t_ac, d_sem] from 12.5 Hz token indices."""
        s_q = self.semantic_codebook.entries.detach()[sem_tokens]
        return self.adapter(s_q, float(self.frame_rate))

    def decode_from_embeddings(
        self,
        a_q: torch.Tensor,
        s_q_up: torch.Tensor,
        pattern: ReconstructionPattern = ReconstructionPattern.FULL,
    ) -> torch.Tensor:
        a_q, s_q_up = mask_stream(a_q, s_q_up, pattern)
        fused = self.prenet(a_q, s_q_up, float(self.frame_rate))
        return self.waveform_decoder(fused)

    def forward_train(self, x: torch.Tensor, features: Optional[torch.Tensor] = None) -> TrainForward:
        """One generator forward over a batch of aligned equal-length crops.

        ``features`` overrides the provider with precomputed 50 Hz rows.
        """
        if x.dim() != 2:
            raise ValueError(f"expected [batch, time], got {tuple(x.shape)}")
        if x.shape[-1] % ALIGN_SAMPLES:
            raise ValueError(f"crop length {x.shape[-1]} is not a multiple of {ALIGN_SAMPLES} samples")
        with torch.no_grad():
            s_c = features if features is not None else self.extract_semantic_batch(x)
            s_pooled = pool_to_semantic_rate(s_c)
            sem_tokens, s_q = tokenize_semantic(s_pooled, self.semantic_codebook)
            spk_target = self.speaker_encoder(x)
        s_q_up = self.adapter(s_q, float(self.frame_rate))
        a = self.acoustic_encoder(x)
        q = quantize_acoustic(a, self.projection, self.acoustic_codebook, update_usage=self.training)
        fused = self.prenet(q.embeddings, s_q_up, float(self.frame_rate))
        x_hat = self.waveform_decoder(fused)
        sem_pred = self.semantic_head(fused)
        spk_pred = self.speaker_projector(fused)
        return TrainForward(x_hat, s_c, sem_pred, spk_target, spk_pred, q.code, q.code_q, sem_tokens, q.tokens)

    @torch.no_grad()
    def encode_waveform(self, w: Waveform, utterance_id: Optional[str] = None) -> EncodeResult:
        """Tokenize one waveform; pads to a 1280-sample boundary internally."""
        if w.sample_rate != self.config.sample_rate:
            raise ValueError(f"expected {self.config.sample_rate} Hz input, got {w.sample_rate} Hz")
        original_length = len(w)
        samples, _ = pad_to_multiple(w.samples.astype(np.float32), ALIGN_SAMPLES)
        x = torch.from_numpy(samples)[None]
        if isinstance(self.provider, SurrogateSemanticEncoder):
            s_c = self.provider(x)
        else:
            s_c = self.provider.extract(Waveform(samples), utterance_id)[None]
        s_pooled = pool_to_semantic_rate(s_c)
        sem_tokens, _ = tokenize_semantic(s_pooled, self.semantic_codebook)
        a = self.acoustic_encoder(x)
        q = quantize_acoustic(a, self.projection, self.acoustic_codebook, update_usage=False)
        return EncodeResult(
            sem_tokens[0].cpu().numpy().astype(np.uint32),
            q.tokens[0].cpu().numpy().astype(np.uint32),
            original_length,
        )

    @torch.no_grad()
    def decode_tokens(
        self,
        semantic_tokens: np.ndarray,
        acoustic_tokens: Optional[np.ndarray],
        pattern: ReconstructionPattern = ReconstructionPattern.FULL,
        original_length: Optional[int] = None,
    ) -> Waveform:
        """Render tokens back to audio, trimming to the original length."""
        sem = torch.from_numpy(np.asarray(semantic_tokens, dtype=np.int64))[None]
        if sem.numel() == 0:
            raise ValueError("empty semantic token sequence")
        if int(sem.max()) >= self.config.k_sem or int(sem.min()) < 0:
            raise ValueError(f"semantic token out of range [0, {self.config.k_sem})")
        factor = int(round(self.frame_rate / SEMANTIC_RATE_HZ))
        t_ac = sem.shape[1] * factor
        if acoustic_tokens is None:
            if pattern is not ReconstructionPattern.SEMANTIC_ONLY:
                raise ValueError("acoustic tokens are absent; only the semantic-only pattern can decode")
            a_q = torch.zeros(1, t_ac, self.config.d_model)
        else:
            ac = torch.from_numpy(np.asarray(acoustic_tokens, dtype=np.int64))[None]
            if ac.shape[1] != t_ac:
                raise ValueError(f"expected {t_ac} acoustic frames for {sem.shape[1]} semantic frames, got {ac.shape[1]}")
            if ac.numel() and (int(ac.max()) >= self.config.k_ac or int(ac.min()) < 0):
                raise ValueError(f"acoustic token out of range [0, {self.config.k_ac})")
            z_q = self.acoustic_codebook.entries.detach()[ac]
            a_q = self.projection.up(z_q)
        s_q_up = self.semantic_embeddings(sem)
        x_hat = self.decode_from_embeddings(a_q, s_q_up, pattern)[0].cpu().numpy()
        if original_length is not None:
            if original_length > x_hat.shape[0]:
                raise ValueError(f"original length {original_length} exceeds decoded length {x_hat.shape[0]}")
            x_hat = x_hat[:original_length]
        return Waveform(x_hat.astype(np.float32), self.config.sample_rate)

    def frozen_parameters(self) -> list[tuple[str, torch.Tensor]]:
        """Named parameters that must never change during training."""
        out = []
        for prefix, module in (
            ("semantic_provider", self.semantic_provider),
            ("semantic_codebook", self.semantic_codebook),
            ("speaker_encoder", self.speaker_encoder),
        ):
            if module is None:
                continue
            for name, p in module.named_parameters():
                out.append((f"{prefix}.{name}", p))
        return out
