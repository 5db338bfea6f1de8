"""Alternating generator/discriminator optimization with bit-exact resume.

The dataset is stateless: which file, which crop, and which dead codes
get refreshed all derive from (seed, step), never from consumed RNG
state. A checkpoint therefore only needs model, optimizer, scheduler,
and EMA state to reproduce the next step exactly.
"""

from __future__ import annotations

import json
import logging
import math
import wave as wave_module
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
from torch import nn

from sac.audio import Waveform, random_crop, read_wav
from sac.discriminators import DiscriminatorSet
from sac.losses import (
    LossBreakdown,
    LossWeights,
    adversarial_losses,
    feature_matching,
    generator_total,
    recon_loss,
    semantic_loss,
    speaker_loss,
)
from sac.model import ALIGN_SAMPLES, SacModel
from sac.providers import SAMPLES_PER_FEATURE_FRAME, read_semantic_record
from sac.quantize import codebook_stats, reinit_dead_codes, vq_loss

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

# Independent RNG lanes derived from the run seed.
_PERM_LANE = 101
_CROP_LANE = 202
_REINIT_LANE = 303


@dataclass
class TrainConfig:
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.8
    beta2: float = 0.9
    lr_decay: float = 0.999996
    warmup_steps: int = 1500
    ema_decay: float = 0.999
    batch_size: int = 8
    crop_s: float = 2.4
    total_steps: int = 850_000
    seed: int = 0
    grad_clip: float = 1000.0
    reinit_threshold: int = 200
    checkpoint_every: int = 500

    def __post_init__(self) -> None:
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if not 0 <= self.ema_decay < 1:
            raise ValueError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.batch_size < 1 or self.total_steps < 1:
            raise ValueError("batch_size and total_steps must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.crop_samples % ALIGN_SAMPLES:
            raise ValueError(
                f"crop_s={self.crop_s} gives {self.crop_samples} samples, "
                f"which must be a multiple of {ALIGN_SAMPLES} (0.08 s) to keep the streams aligned"
            )

    @property
    def crop_samples(self) -> int:
        return int(round(self.crop_s * 16000))


class Batch(NamedTuple):
    wave: torch.Tensor  # [batch, crop_samples]
    features: Optional[torch.Tensor]  # [batch, t50, d_sem] when records are available
    padded: tuple[bool, ...]


class CropDataset:
    """Deterministic, epoch-shuffled random crops from a manifest.

    Manifest lines are a WAV path, optionally followed by a tab and a
    precomputed semantic feature record path. Unreadable entries are
    skipped with a warning at construction. Crop starts snap to the
    1280-sample stream-alignment grid so precomputed 50 Hz feature rows
    can be sliced exactly.
    """

    def __init__(self, manifest_path, crop_s: float, batch_size: int, seed: int):
        self.crop_samples = int(round(crop_s * 16000))
        if self.crop_samples % ALIGN_SAMPLES:
            raise ValueError(f"crop of {self.crop_samples} samples is not a multiple of {ALIGN_SAMPLES}")
        self.batch_size = batch_size
        self.seed = seed
        self.wav_paths: list[Path] = []
        self.record_paths: list[Optional[Path]] = []
        manifest_path = Path(manifest_path)
        base = manifest_path.parent
        for line in manifest_path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            wav = Path(parts[0])
            if not wav.is_absolute():
                wav = base / wav
            record = None
            if len(parts) > 1 and parts[1]:
                record = Path(parts[1])
                if not record.is_absolute():
                    record = base / record
            try:
                with wave_module.open(str(wav), "rb") as f:
                    f.getnframes()
            except (OSError, wave_module.Error) as exc:
                logger.warning("skipping unreadable file %s: %s", wav, exc)
                continue
            self.wav_paths.append(wav)
            self.record_paths.append(record)
        if not self.wav_paths:
            raise ValueError(f"{manifest_path}: no readable WAV files")
        self._wave_cache: dict[Path, Waveform] = {}
        self._feature_cache: dict[Path, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.wav_paths)

    def _waveform(self, path: Path) -> Waveform:
        if path not in self._wave_cache:
            self._wave_cache[path] = read_wav(path)
        return self._wave_cache[path]

    def _features(self, path: Path) -> np.ndarray:
        if path not in self._feature_cache:
            _, features, _ = read_semantic_record(path)
            self._feature_cache[path] = features
        return self._feature_cache[path]

    def _item(self, global_index: int) -> tuple[np.ndarray, Optional[np.ndarray], bool]:
        n = len(self.wav_paths)
        epoch, offset = divmod(global_index, n)
        perm = np.random.default_rng([self.seed, _PERM_LANE, epoch]).permutation(n)
        file_index = int(perm[offset])
        w = self._waveform(self.wav_paths[file_index])
        step, j = divmod(global_index, self.batch_size)
        crop = random_crop(w, self.crop_samples / 16000, [self.seed, _CROP_LANE, step, j], align=ALIGN_SAMPLES)
        features = None
        record = self.record_paths[file_index]
        if record is not None:
            stored = self._features(record)
            t50 = self.crop_samples // SAMPLES_PER_FEATURE_FRAME
            first = crop.start // SAMPLES_PER_FEATURE_FRAME
            rows = stored[first : first + t50]
            features = np.zeros((t50, stored.shape[1]), dtype=np.float32)
            features[: rows.shape[0]] = rows
        return crop.waveform.samples.astype(np.float32), features, crop.padded

    def batch(self, step: int) -> Batch:
        waves, features, padded = [], [], []
        for j in range(self.batch_size):
            samples, f, was_padded = self._item(step * self.batch_size + j)
            waves.append(torch.from_numpy(samples))
            features.append(f)
            padded.append(was_padded)
        wave = torch.stack(waves)
        if all(f is not None for f in features):
            feats = torch.from_numpy(np.stack(features))
        else:
            feats = None
        return Batch(wave, feats, tuple(padded))


class Trainer:
    """Owns the optimization state: model, discriminators, EMA, schedules."""

    def __init__(
        self,
        model: SacModel,
        discriminators: DiscriminatorSet,
        dataset: CropDataset,
        train_config: TrainConfig,
        weights: LossWeights = LossWeights(),
        recon_scales=None,
        run_config: Optional[dict] = None,
        ablate: str = "none",
    ):
        self.model = model
        self.discs = discriminators
        self.dataset = dataset
        self.cfg = train_config
        self.weights = weights
        self.recon_scales = recon_scales
        self.run_config = run_config
        self.ablate = ablate
        gen_params = [p for p in model.parameters() if p.requires_grad]
        self.opt_g = torch.optim.AdamW(gen_params, lr=train_config.lr_g, betas=(train_config.beta1, train_config.beta2))
        self.opt_d = torch.optim.AdamW(
            discriminators.parameters(), lr=train_config.lr_d, betas=(train_config.beta1, train_config.beta2)
        )
        self.sched_g = torch.optim.lr_scheduler.ExponentialLR(self.opt_g, gamma=train_config.lr_decay)
        self.sched_d = torch.optim.lr_scheduler.ExponentialLR(self.opt_d, gamma=train_config.lr_decay)
        self.ema = {
            name: p.detach().clone() for name, p in model.named_parameters() if p.requires_grad
        }
        self.step_count = 0

    def _update_ema(self) -> None:
        d = self.cfg.ema_decay
        with torch.no_grad():
            for name, p in self.model.named_parameters():
                if name in self.ema:
                    self.ema[name].mul_(d).add_(p.detach(), alpha=1 - d)

    def train_step(self, batch: Batch, step: int) -> tuple[LossBreakdown, dict]:
        """One optimization step; returns the breakdown and log extras."""
        self.model.train()
        x = batch.wave
        fwd = self.model.forward_train(x, batch.features)
        recon = recon_loss(fwd.x_hat, x, self.recon_scales)
        vq = vq_loss(fwd.code, fwd.code_q, self.weights.commit, self.weights.codebook)
        sem = semantic_loss(fwd.sem_pred, fwd.s_c)
        spk = speaker_loss(fwd.spk_pred, fwd.spk_target)
        warmup = step < self.cfg.warmup_steps
        d_loss_value = 0.0
        if warmup:
            adv, feat = 0.0, 0.0
        else:
            d_real = self.discs(x)
            d_fake = self.discs(fwd.x_hat.detach())
            d_loss, _ = adversarial_losses(d_real.scores, d_fake.scores)
            d_loss_value = float(d_loss.detach())
            if not math.isfinite(d_loss_value):
                raise ValueError(f"non-finite loss term 'disc': {d_loss_value}")
            self.opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            nn.utils.clip_grad_norm_(self.discs.parameters(), self.cfg.grad_clip)
            self.opt_d.step()
            self.sched_d.step()
            # Generator sees the updated discriminator, frozen for this pass.
            with torch.no_grad():
                d_real2 = self.discs(x)
            for p in self.discs.parameters():
                p.requires_grad_(False)
            d_fake2 = self.discs(fwd.x_hat)
            _, adv = adversarial_losses(d_real2.scores, d_fake2.scores)
            feat = feature_matching(d_real2.features, d_fake2.features)
        total, breakdown = generator_total(
            {"recon": recon, "vq": vq, "adv": adv, "feat": feat, "sem": sem, "spk": spk}, self.weights
        )
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        if not warmup:
            for p in self.discs.parameters():
                p.requires_grad_(True)
        nn.utils.clip_grad_norm_((p for p in self.model.parameters() if p.requires_grad), self.cfg.grad_clip)
        self.opt_g.step()
        self.sched_g.step()
        self._update_ema()
        latents = fwd.code.detach().reshape(-1, self.model.config.d_code)
        reinitialized = reinit_dead_codes(
            self.model.acoustic_codebook,
            latents,
            self.cfg.reinit_threshold,
            [self.cfg.seed, _REINIT_LANE, step],
        )
        ac_stats = codebook_stats(fwd.ac_tokens, self.model.config.k_ac)
        extras = {
            "d_loss": d_loss_value,
            "warmup": warmup,
            "lr_g": self.opt_g.param_groups[0]["lr"],
            "lr_d": self.opt_d.param_groups[0]["lr"],
            "reinitialized": reinitialized,
            "ac_utilization": ac_stats.utilization,
            "ac_perplexity": ac_stats.perplexity,
        }
        return breakdown, extras

    def run(
        self,
        out_dir=None,
        log_path=None,
        total_steps: Optional[int] = None,
    ) -> LossBreakdown:
        """Run from the current step to total_steps, logging and checkpointing."""
        total = total_steps if total_steps is not None else self.cfg.total_steps
        out_dir = Path(out_dir) if out_dir is not None else None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
        log_file = None
        if log_path is not None:
            fresh = self.step_count == 0
            log_file = open(log_path, "a")
            if fresh:
                header = {
                    "config": self.run_config,
                    "config_hash": config_digest(self.run_config),
                    "ablate": self.ablate,
                }
                log_file.write(json.dumps(header) + "\n")
        last = None
        try:
            for step in range(self.step_count, total):
                batch = self.dataset.batch(step)
                breakdown, extras = self.train_step(batch, step)
                self.step_count = step + 1
                last = breakdown
                if log_file is not None:
                    record = {"step": step, **breakdown.as_dict(), **extras}
                    log_file.write(json.dumps(record) + "\n")
                    log_file.flush()
                if out_dir is not None and self.cfg.checkpoint_every and (step + 1) % self.cfg.checkpoint_every == 0:
                    self.save_checkpoint(out_dir / f"checkpoint_{step + 1:08d}.pt")
            if out_dir is not None:
                self.save_checkpoint(out_dir / "checkpoint_final.pt", is_final=True)
        finally:
            if log_file is not None:
                log_file.close()
        return last

    def save_checkpoint(self, path, is_final: bool = False) -> None:
        payload = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "step": self.step_count,
            "model_state": self.model.state_dict(),
            "disc_state": self.discs.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "sched_g": self.sched_g.state_dict(),
            "sched_d": self.sched_d.state_dict(),
            "ema": self.ema,
            "torch_rng": torch.get_rng_state(),
            "run_config": self.run_config,
            "config_hash": config_digest(self.run_config),
            "ablate": self.ablate,
            "is_final": is_final,
        }
        torch.save(payload, path)

    def load_state(self, checkpoint: dict) -> None:
        """Restore a checkpoint made by a trainer of identical construction."""
        if checkpoint.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {checkpoint.get('format_version')}")
        self.model.load_state_dict(checkpoint["model_state"])
        self.discs.load_state_dict(checkpoint["disc_state"])
        self.opt_g.load_state_dict(checkpoint["opt_g"])
        self.opt_d.load_state_dict(checkpoint["opt_d"])
        self.sched_g.load_state_dict(checkpoint["sched_g"])
        self.sched_d.load_state_dict(checkpoint["sched_d"])
        self.ema = {name: t.clone() for name, t in checkpoint["ema"].items()}
        torch.set_rng_state(checkpoint["torch_rng"])
        self.step_count = checkpoint["step"]


def config_digest(run_config: Optional[dict]) -> str:
    """Stable hash of a run configuration dict."""
    import hashlib

    canonical = json.dumps(run_config, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def load_checkpoint(path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=False)


def apply_ema_weights(model: SacModel, ema: dict) -> None:
    """Copy EMA tensors over the matching trainable parameters."""
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name in ema:
                p.copy_(ema[name])
