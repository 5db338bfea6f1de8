"""Semantic stream: 50 Hz features to 12.5 Hz tokens to decoder-rate embeddings.

The provider's features are mean-pooled four-to-one, quantized against a
frozen codebook, and the selected entries are upsampled by a small
residual conv adapter so they align frame-for-frame with the acoustic
stream. Nothing on this path receives gradient except the adapter.
"""

from __future__ import annotations

import logging

import numpy as np
import torch
from sklearn.cluster import KMeans
from torch import nn

from sac.layers import ConvNeXtBlock
from sac.quantize import Codebook, quantize

logger = logging.getLogger(__name__)

POOL_FACTOR = 4
SEMANTIC_RATE_HZ = 12.5


def pool_to_semantic_rate(s_c: torch.Tensor) -> torch.Tensor:
    """Mean-pool 50 Hz features into non-overlapping groups of four.

    Accepts [t50, d] or [batch, t50, d]. A trailing remainder of frames
    is dropped with a warning; fewer than four frames is an error.
    """
    t = s_c.shape[-2]
    if t < 1:
        raise ValueError("empty feature sequence")
    rem = t % POOL_FACTOR
    if rem:
        logger.warning("dropping %d trailing frame(s) not filling a pooling group", rem)
        s_c = s_c[..., : t - rem, :]
    if s_c.shape[-2] == 0:
        raise ValueError(f"need at least {POOL_FACTOR} frames to pool, got {t}")
    shape = s_c.shape
    grouped = s_c.reshape(*shape[:-2], shape[-2] // POOL_FACTOR, POOL_FACTOR, shape[-1])
    return grouped.mean(dim=-2)


def tokenize_semantic(s: torch.Tensor, cb_sem: Codebook) -> tuple[torch.Tensor, torch.Tensor]:
    """Quantize pooled features against the frozen semantic codebook.

    Returns (tokens, s_q) with the input's leading shape. No gradient
    reaches the codebook and its usage counters stay untouched; the
    semantic codebook never trains or reinitializes.
    """
    flat = s.reshape(-1, s.shape[-1])
    with torch.no_grad():
        idx, _ = quantize(flat, cb_sem, update_usage=False)
        s_q = cb_sem.entries.detach()[idx]
    tokens = idx.reshape(s.shape[:-1])
    return tokens, s_q.reshape(s.shape)


class SemanticAdapter(nn.Module):
    """Nearest-neighbor temporal upsampling followed by residual conv blocks.

    With freshly initialized blocks the output equals the repeated input
    exactly (each block starts as an identity).
    """

    def __init__(self, d_sem: int, num_blocks: int = 2, kernel_size: int = 7):
        super().__init__()
        self.d_sem = d_sem
        self.blocks = nn.ModuleList(ConvNeXtBlock(d_sem, kernel_size) for _ in range(num_blocks))

    def forward(self, s_q: torch.Tensor, target_rate: float) -> torch.Tensor:
        # s_q: [t12.5, d] or [batch, t12.5, d] -> same leading shape at target_rate
        ratio = target_rate / SEMANTIC_RATE_HZ
        factor = int(round(ratio))
        if abs(ratio - factor) > 1e-9 or factor not in (2, 4):
            raise ValueError(
                f"target rate {target_rate} Hz is not an integer multiple (2x or 4x) of {SEMANTIC_RATE_HZ} Hz"
            )
        squeeze = s_q.dim() == 2
        x = s_q[None] if squeeze else s_q
        x = x.repeat_interleave(factor, dim=-2)
        for block in self.blocks:
            x = block(x)
        return x[0] if squeeze else x


def build_semantic_codebook(
    provider,
    waveforms,
    k: int,
    seed: int = 0,
    max_rows: int = 20000,
) -> Codebook:
    """Fit a frozen codebook by k-means over pooled provider features.

    The stand-in for a pretrained tokenizer's codebook: deterministic
    under (provider, corpus, k, seed). Raises if the corpus yields fewer
    pooled frames than k.
    """
    rows = []
    for w in waveforms:
        features = provider.extract(w)
        if features.shape[0] >= POOL_FACTOR:
            rows.append(pool_to_semantic_rate(features))
    if not rows:
        raise ValueError("corpus produced no pooled semantic frames")
    data = torch.cat(rows).cpu().numpy().astype(np.float64)
    if data.shape[0] > max_rows:
        keep = np.random.default_rng(seed).choice(data.shape[0], size=max_rows, replace=False)
        data = data[np.sort(keep)]
    if data.shape[0] < k:
        raise ValueError(f"need at least {k} pooled frames to fit {k} codes, got {data.shape[0]}")
    km = KMeans(n_clusters=k, random_state=seed, n_init=4).fit(data)
    cb = Codebook(k, data.shape[1])
    with torch.no_grad():
        cb.entries.copy_(torch.from_numpy(km.cluster_centers_.astype(np.float32)))
        cb.usage.zero_()
    return cb.freeze()


def load_codebook_npy(path) -> Codebook:
    """Load a frozen codebook from a [k, d] .npy entry matrix."""
    entries = np.load(path)
    if entries.ndim != 2:
        raise ValueError(f"{path}: expected a [k, d] matrix, got shape {entries.shape}")
    cb = Codebook(entries.shape[0], entries.shape[1])
    with torch.no_grad():
        cb.entries.copy_(torch.from_numpy(entries.astype(np.float32)))
        cb.usage.zero_()
    return cb.freeze()
