"""Generator and discriminator objectives.

Every term reduces by mean, never sum, so the weights keep their meaning
across batch sizes and signal lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from sac.audio import LOG_EPS, SpectrogramScale, mel_filterbank, stft_magnitude

RECON_FFT_SIZES = (512, 1024, 2048)
RECON_MEL_BINS = 80


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the weighted generator objective."""

    recon: float = 15.0
    vq: float = 1.0
    adv: float = 1.0
    feat: float = 2.0
    sem: float = 1000.0
    spk: float = 10.0
    # Internal split of the vq term.
    commit: float = 0.25
    codebook: float = 4.0

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0")


@dataclass
class LossBreakdown:
    """Per-term scalars of one generator update, plus the weighted total."""

    recon: float
    vq: float
    adv: float
    feat: float
    sem: float
    spk: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def default_recon_scales(mel_on_log: bool = True, fft_sizes: Sequence[int] = RECON_FFT_SIZES) -> tuple[SpectrogramScale, ...]:
    """The multi-resolution settings used by the reconstruction loss.

    Each scale's mel_bins applies to its log branch only; the linear
    branch always stays at full spectral resolution.
    """
    return tuple(
        SpectrogramScale(fft, fft // 4, mel_bins=RECON_MEL_BINS if mel_on_log else None, log_domain=True)
        for fft in fft_sizes
    )


def l1_linear_plus_log(mag_x: torch.Tensor, mag_y: torch.Tensor, eps: float = LOG_EPS) -> torch.Tensor:
    """Mean L1 between magnitude matrices plus mean L1 between their logs."""
    lin = (mag_x - mag_y).abs().mean()
    log = ((mag_x + eps).log() - (mag_y + eps).log()).abs().mean()
    return lin + log


def recon_loss(
    x: torch.Tensor,
    y: torch.Tensor,
    scales: Optional[Sequence[SpectrogramScale]] = None,
    sample_rate: int = 16000,
) -> torch.Tensor:
    """Multi-resolution spectrogram distance between two signal batches.

    Per scale: L1 on linear magnitudes plus L1 on log magnitudes, where
    the log branch first projects to mel bins when the scale asks for
    them. The per-scale sums are averaged.
    """
    if x.shape != y.shape:
        raise ValueError(f"signal shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.dim() == 1:
        x, y = x[None], y[None]
    scales = tuple(scales) if scales is not None else default_recon_scales()
    if not scales:
        raise ValueError("need at least one spectrogram scale")
    terms = []
    for scale in scales:
        mag_x = stft_magnitude(x, scale.fft_size, scale.hop)
        mag_y = stft_magnitude(y, scale.fft_size, scale.hop)
        if scale.mel_bins is None:
            terms.append(l1_linear_plus_log(mag_x, mag_y))
            continue
        lin = (mag_x - mag_y).abs().mean()
        bank = torch.from_numpy(np.array(mel_filterbank(sample_rate, scale.fft_size, scale.mel_bins)))
        bank = bank.T.to(mag_x.dtype)
        log = ((mag_x @ bank + LOG_EPS).log() - (mag_y @ bank + LOG_EPS).log()).abs().mean()
        terms.append(lin + log)
    return torch.stack(terms).mean()


def adversarial_losses(
    real_scores: Sequence[torch.Tensor],
    fake_scores: Sequence[torch.Tensor],
) -> tuple[torch.Tensor, torch.Tensor]:
    """Least-squares GAN terms over all sub-discriminator score maps.

    Returns (d_loss, g_adv_loss): the discriminator drives real maps to 1
    and fake maps to 0; the generator drives fake maps to 1. Per-map means
    are averaged across sub-discriminators.
    """
    if len(real_scores) == 0 or len(fake_scores) == 0:
        raise ValueError("empty score list")
    if len(real_scores) != len(fake_scores):
        raise ValueError(f"score list lengths differ: {len(real_scores)} vs {len(fake_scores)}")
    d_terms, g_terms = [], []
    for r, f in zip(real_scores, fake_scores):
        d_terms.append(((r - 1.0) ** 2).mean() + (f**2).mean())
        g_terms.append(((f - 1.0) ** 2).mean())
    return torch.stack(d_terms).mean(), torch.stack(g_terms).mean()


def feature_matching(
    real_feats: Sequence[Sequence[torch.Tensor]],
    fake_feats: Sequence[Sequence[torch.Tensor]],
) -> torch.Tensor:
    """Mean L1 between intermediate feature maps of real and fake passes.

    Each layer's distance is a mean over its own elements; layers average
    within a sub-discriminator and sub-discriminators average equally.
    """
    if len(real_feats) == 0 or len(real_feats) != len(fake_feats):
        raise ValueError(f"feature structure mismatch: {len(real_feats)} vs {len(fake_feats)} sub-discriminators")
    per_disc = []
    for r_layers, f_layers in zip(real_feats, fake_feats):
        if len(r_layers) == 0 or len(r_layers) != len(f_layers):
            raise ValueError(f"feature structure mismatch: {len(r_layers)} vs {len(f_layers)} layers")
        layer_terms = []
        for r, f in zip(r_layers, f_layers):
            if r.shape != f.shape:
                raise ValueError(f"feature shape mismatch: {tuple(r.shape)} vs {tuple(f.shape)}")
            layer_terms.append((r - f).abs().mean())
        per_disc.append(torch.stack(layer_terms).mean())
    return torch.stack(per_disc).mean()


def semantic_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error between predicted and provider semantic features."""
    if pred.shape != target.shape:
        raise ValueError(f"semantic shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return F.mse_loss(pred, target)


def speaker_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error between predicted and target speaker embeddings."""
    if pred.shape != target.shape:
        raise ValueError(f"speaker shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return F.mse_loss(pred, target)


_TERM_NAMES = ("recon", "vq", "adv", "feat", "sem", "spk")


def generator_total(
    terms: Mapping[str, Union[torch.Tensor, float]],
    weights: LossWeights = LossWeights(),
) -> tuple[torch.Tensor, LossBreakdown]:
    """Weighted sum of the six generator terms.

    Returns the differentiable total and a float breakdown. Any
    non-finite term aborts with its name.
    """
    values = {}
    for name in _TERM_NAMES:
        if name not in terms:
            raise ValueError(f"missing loss term {name!r}")
        term = terms[name]
        value = float(term.detach()) if isinstance(term, torch.Tensor) else float(term)
        if not math.isfinite(value):
            raise ValueError(f"non-finite loss term {name!r}: {value}")
        values[name] = value
    total = sum(getattr(weights, name) * terms[name] for name in _TERM_NAMES)
    if not torch.is_tensor(total):
        total = torch.as_tensor(total, dtype=torch.float32)
    total_value = float(total.detach()) if isinstance(total, torch.Tensor) else float(total)
    breakdown = LossBreakdown(total=total_value, **values)
    return total, breakdown
