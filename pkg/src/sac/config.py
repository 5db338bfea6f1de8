"""Flat key-value run configuration and checkpoint-to-model assembly.

One file controls every tunable: stream strides, codebook sizes, loss
weights, surrogate seeds, and desk-scale limits. No nesting, so a diff
against the defaults is reviewable at a glance. Unknown keys are
rejected and all validation problems are reported together.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

from sac.discriminators import DiscriminatorSet
from sac.losses import LossWeights, default_recon_scales
from sac.model import SacModel, SacModelConfig
from sac.training import TrainConfig, config_digest, load_checkpoint, apply_ema_weights

ABLATIONS = ("none", "no_spk", "no_sem")


class ConfigError(ValueError):
    """Carries every validation problem found, not just the first."""

    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclass
class RunConfig:
    # Model topology.
    sample_rate: int = 16000
    strides: Tuple[int, ...] = (2, 2, 4, 5, 8)
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
    # Frozen-surrogate and initialization seeds.
    semantic_seed: int = 1234
    speaker_seed: int = 4321
    codebook_seed: int = 5678
    init_seed: int = 2024
    # Discriminators.
    disc_periods: Tuple[int, ...] = (2, 3, 5, 7, 11)
    disc_fft_sizes: Tuple[int, ...] = (512, 1024, 2048)
    disc_width_scale: float = 1.0
    # Loss weights.
    lambda_recon: float = 15.0
    lambda_vq: float = 1.0
    lambda_adv: float = 1.0
    lambda_feat: float = 2.0
    lambda_sem: float = 1000.0
    lambda_spk: float = 10.0
    commit_weight: float = 0.25
    codebook_weight: float = 4.0
    recon_fft_sizes: Tuple[int, ...] = (512, 1024, 2048)
    mel_on_log: bool = True
    # Optimization.
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
    # Semantic codebook fitting cap (desk-scale).
    sem_fit_max_rows: int = 20000

    def as_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @property
    def config_hash(self) -> str:
        return config_digest(self.as_dict())

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        problems = []
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(values) - set(known)
        for key in sorted(unknown):
            problems.append(f"unknown key {key!r}")
        kwargs = {}
        for key, raw in values.items():
            if key in unknown:
                continue
            default = known[key].default
            try:
                kwargs[key] = _coerce(raw, default, key)
            except ValueError as exc:
                problems.append(str(exc))
        if problems:
            raise ConfigError(problems)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError([f"config file not found: {path}"])
        values = {}
        problems = []
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                problems.append(f"line {lineno}: expected 'key = value', got {stripped!r}")
                continue
            key, _, value = stripped.partition("=")
            key, value = key.strip(), value.strip()
            if key in values:
                problems.append(f"line {lineno}: duplicate key {key!r}")
                continue
            values[key] = value
        if problems:
            raise ConfigError(problems)
        return cls.from_dict(values)

    def validate(self) -> None:
        """Run every structural check and report all failures at once."""
        problems = []
        for builder in (self.to_model_config, self.to_train_config, self.to_loss_weights):
            try:
                builder()
            except ValueError as exc:
                problems.append(str(exc))
        if self.disc_width_scale <= 0:
            problems.append(f"disc_width_scale must be positive, got {self.disc_width_scale}")
        if len(set(self.disc_periods)) != len(self.disc_periods) or any(p < 1 for p in self.disc_periods):
            problems.append(f"disc_periods must be distinct positive integers, got {self.disc_periods}")
        if any(f < 32 for f in self.disc_fft_sizes) or any(f < 32 for f in self.recon_fft_sizes):
            problems.append("FFT sizes below 32 are not usable")
        if self.k_sem < 2 or self.k_ac < 2:
            problems.append(f"codebooks need at least 2 entries, got k_sem={self.k_sem} k_ac={self.k_ac}")
        if self.sem_fit_max_rows < self.k_sem:
            problems.append(
                f"sem_fit_max_rows ({self.sem_fit_max_rows}) must be at least k_sem ({self.k_sem})"
            )
        if problems:
            raise ConfigError(problems)

    def to_model_config(self) -> SacModelConfig:
        return SacModelConfig(
            sample_rate=self.sample_rate,
            strides=tuple(self.strides),
            base_channels=self.base_channels,
            d_model=self.d_model,
            d_code=self.d_code,
            k_ac=self.k_ac,
            k_sem=self.k_sem,
            d_sem=self.d_sem,
            adapter_blocks=self.adapter_blocks,
            prenet_blocks=self.prenet_blocks,
            decoder_channels=self.decoder_channels,
            d_spk=self.d_spk,
            speaker_hidden=self.speaker_hidden,
            semantic_seed=self.semantic_seed,
            speaker_seed=self.speaker_seed,
            codebook_seed=self.codebook_seed,
            init_seed=self.init_seed,
        )

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            lr_g=self.lr_g,
            lr_d=self.lr_d,
            beta1=self.beta1,
            beta2=self.beta2,
            lr_decay=self.lr_decay,
            warmup_steps=self.warmup_steps,
            ema_decay=self.ema_decay,
            batch_size=self.batch_size,
            crop_s=self.crop_s,
            total_steps=self.total_steps,
            seed=self.seed,
            grad_clip=self.grad_clip,
            reinit_threshold=self.reinit_threshold,
            checkpoint_every=self.checkpoint_every,
        )

    def to_loss_weights(self, ablate: str = "none") -> LossWeights:
        if ablate not in ABLATIONS:
            raise ValueError(f"unknown ablation {ablate!r}, expected one of {ABLATIONS}")
        return LossWeights(
            recon=self.lambda_recon,
            vq=self.lambda_vq,
            adv=self.lambda_adv,
            feat=self.lambda_feat,
            sem=0.0 if ablate == "no_sem" else self.lambda_sem,
            spk=0.0 if ablate == "no_spk" else self.lambda_spk,
            commit=self.commit_weight,
            codebook=self.codebook_weight,
        )

    def to_recon_scales(self):
        return default_recon_scales(mel_on_log=self.mel_on_log, fft_sizes=tuple(self.recon_fft_sizes))


def _coerce(raw, default, key: str):
    """Convert a raw config value (string from file, or already typed) to
    the type of the field default."""
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("true", "1", "yes"):
            return True
        if text in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected true/false, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(str(raw).strip())
        except ValueError:
            raise ValueError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(str(raw).strip())
        except ValueError:
            raise ValueError(f"{key}: expected a number, got {raw!r}") from None
    if isinstance(default, tuple):
        if isinstance(raw, (list, tuple)):
            parts = list(raw)
        else:
            parts = [p for p in str(raw).replace(",", " ").split() if p]
        try:
            return tuple(int(p) for p in parts)
        except (TypeError, ValueError):
            raise ValueError(f"{key}: expected comma-separated integers, got {raw!r}") from None
    return str(raw)


def write_default_config(path) -> None:
    """Write the canonical defaults as an editable config file."""
    cfg = RunConfig()
    lines = ["# sac run configuration (defaults)"]
    for f in dataclasses.fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def build_model(cfg: RunConfig, semantic_provider=None, semantic_codebook=None) -> SacModel:
    return SacModel(cfg.to_model_config(), semantic_provider=semantic_provider, semantic_codebook=semantic_codebook)


def build_discriminators(cfg: RunConfig) -> DiscriminatorSet:
    return DiscriminatorSet(
        periods=tuple(cfg.disc_periods),
        fft_sizes=tuple(cfg.disc_fft_sizes),
        width_scale=cfg.disc_width_scale,
    )


def load_model_from_checkpoint(path, use_ema: bool = True) -> tuple[SacModel, RunConfig]:
    """Rebuild the model a checkpoint was trained with and load its weights.

    The EMA weights are applied by default; pass use_ema=False for the raw
    parameters.
    """
    ckpt = load_checkpoint(path)
    stored = ckpt.get("run_config")
    if stored is None:
        raise ValueError(f"{path}: checkpoint carries no run configuration")
    cfg = RunConfig.from_dict(stored)
    model = build_model(cfg)
    model.load_state_dict(ckpt["model_state"])
    if use_ema:
        apply_ema_weights(model, ckpt["ema"])
    model.eval()
    return model, cfg
