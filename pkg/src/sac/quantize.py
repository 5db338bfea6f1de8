"""Single-codebook vector quantization.

Nearest-neighbor lookup under L2 distance, straight-through gradients,
the commitment/codebook loss pair, staleness-driven reinitialization of
dead entries, and utilization statistics. Both token streams share this
machinery; the semantic stream simply keeps its codebook frozen.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence, Union

import numpy as np
import torch
from torch import nn

_CHUNK_ROWS = 4096


class Codebook(nn.Module):
    """Embedding table with per-entry staleness counters.

    ``entries`` is a [num_entries, code_dim] parameter. ``usage`` counts
    optimizer steps since each entry was last selected and feeds dead-code
    reinitialization.
    """

    def __init__(self, num_entries: int, code_dim: int, init_seed: int = 0):
        super().__init__()
        if num_entries < 2:
            raise ValueError(f"codebook needs at least 2 entries, got {num_entries}")
        if code_dim < 1:
            raise ValueError(f"code_dim must be >= 1, got {code_dim}")
        gen = torch.Generator().manual_seed(init_seed)
        bound = 1.0 / num_entries
        entries = torch.empty(num_entries, code_dim)
        entries.uniform_(-bound, bound, generator=gen)
        self.entries = nn.Parameter(entries)
        self.register_buffer("usage", torch.zeros(num_entries, dtype=torch.long))

    @property
    def num_entries(self) -> int:
        return self.entries.shape[0]

    @property
    def code_dim(self) -> int:
        return self.entries.shape[1]

    def freeze(self) -> "Codebook":
        self.entries.requires_grad_(False)
        return self


def quantize(z: torch.Tensor, cb: Codebook, update_usage: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """Nearest codebook entry per row under L2 distance.

    Distances accumulate in float32 one dimension at a time and argmin
    takes the lowest index on ties, so the result is bit-reproducible
    against a brute-force scan using the same accumulation order.

    Args:
        z: [n, code_dim] finite tensor.
        cb: codebook to search.
        update_usage: when True, selected entries' staleness counters
            reset to 0 and all others increment by one.

    Returns:
        (indices [n] int64, z_q [n, code_dim]). z_q rows are codebook
        entries and are differentiable w.r.t. the codebook only.
    """
    if z.dim() != 2 or z.shape[1] != cb.code_dim:
        raise ValueError(f"expected [n, {cb.code_dim}] input, got shape {tuple(z.shape)}")
    if z.shape[0] < 1:
        raise ValueError("cannot quantize an empty batch")
    if not torch.isfinite(z).all():
        raise ValueError("quantize: input contains non-finite values")
    with torch.no_grad():
        zf = z.detach().to(torch.float32)
        ef = cb.entries.detach().to(torch.float32)
        parts = []
        for chunk in zf.split(_CHUNK_ROWS, dim=0):
            acc = torch.zeros(chunk.shape[0], ef.shape[0], dtype=torch.float32)
            for j in range(ef.shape[1]):
                diff = chunk[:, j].unsqueeze(1) - ef[:, j].unsqueeze(0)
                acc += diff * diff
            parts.append(acc.argmin(dim=1))
        indices = torch.cat(parts) if len(parts) > 1 else parts[0]
        if update_usage:
            cb.usage += 1
            cb.usage[indices] = 0
    z_q = cb.entries[indices]
    return indices, z_q


def straight_through(z: torch.Tensor, z_q: torch.Tensor) -> torch.Tensor:
    """Forward the quantized value; backprop as identity onto z."""
    if z.shape != z_q.shape:
        raise ValueError(f"shape mismatch: {tuple(z.shape)} vs {tuple(z_q.shape)}")
    return z + (z_q - z).detach()


def vq_loss(
    z: torch.Tensor,
    z_q: torch.Tensor,
    w_commit: float = 0.25,
    w_codebook: float = 4.0,
) -> torch.Tensor:
    """Codebook + commitment quantization loss, mean over all elements.

    The codebook term pulls entries toward stopgrad(z); the commitment
    term pulls the encoder toward stopgrad(z_q). Gradient reaches each
    side through exactly one term.
    """
    if z.shape != z_q.shape:
        raise ValueError(f"shape mismatch: {tuple(z.shape)} vs {tuple(z_q.shape)}")
    codebook_term = ((z.detach() - z_q) ** 2).mean()
    commit_term = ((z - z_q.detach()) ** 2).mean()
    return w_codebook * codebook_term + w_commit * commit_term


def reinit_dead_codes(
    cb: Codebook,
    batch_latents: torch.Tensor,
    threshold_steps: int,
    rng_seed: Union[int, Sequence[int]],
) -> int:
    """Overwrite stale entries with random rows of the current batch latents.

    Every entry whose staleness counter is >= threshold_steps is replaced
    by a uniformly sampled row (with replacement) and its counter reset.
    Returns the number of entries reinitialized.
    """
    if batch_latents.dim() != 2 or batch_latents.shape[0] < 1:
        raise ValueError(f"batch_latents must be [n >= 1, code_dim], got shape {tuple(batch_latents.shape)}")
    if batch_latents.shape[1] != cb.code_dim:
        raise ValueError(f"latent dim {batch_latents.shape[1]} does not match code_dim {cb.code_dim}")
    with torch.no_grad():
        dead = cb.usage >= threshold_steps
        count = int(dead.sum())
        if count == 0:
            return 0
        rng = np.random.default_rng(rng_seed)
        rows = torch.from_numpy(rng.integers(0, batch_latents.shape[0], size=count))
        cb.entries.data[dead] = batch_latents.detach()[rows].to(cb.entries.dtype)
        cb.usage[dead] = 0
    return count


class CodebookStats(NamedTuple):
    utilization: float
    perplexity: float


def codebook_stats(indices, num_entries: int) -> CodebookStats:
    """Fraction of entries used and exp-entropy of the code distribution."""
    if isinstance(indices, torch.Tensor):
        indices = indices.detach().cpu().numpy()
    idx = np.asarray(indices).ravel().astype(np.int64)
    if idx.size < 1:
        raise ValueError("need at least one index")
    if idx.min() < 0 or idx.max() >= num_entries:
        raise ValueError(f"indices out of range [0, {num_entries})")
    counts = np.bincount(idx, minlength=num_entries)
    p = counts / counts.sum()
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    utilization = float((counts > 0).sum() / num_entries)
    return CodebookStats(utilization, float(np.exp(entropy)))


class FactorizedProjection(nn.Module):
    """Linear down/up maps around the low-dimensional code space."""

    def __init__(self, d_model: int, d_code: int):
        super().__init__()
        if d_code >= d_model:
            raise ValueError(f"d_code ({d_code}) must be smaller than d_model ({d_model})")
        self.down = nn.Linear(d_model, d_code, bias=False)
        self.up = nn.Linear(d_code, d_model, bias=False)
