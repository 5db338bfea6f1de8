"""Waveform container, spectrograms, random cropping, and WAV file I/O.

All audio in this package is mono float at 16 kHz. Spectrograms follow the
center convention: the signal is reflect-padded by ``fft_size // 2`` on both
sides, so a length-L signal yields ``L // hop + 1`` frames.
"""

from __future__ import annotations

import functools
import wave
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np
import torch

CANONICAL_SAMPLE_RATE = 16000
# Floor added before any log so silence maps to a finite value.
LOG_EPS = 1e-5


@dataclass
class Waveform:
    """Mono audio samples with a sample rate.

    Samples are a 1-D float array, nominally in [-1, 1]. Range clamping
    happens only at file-write time; in-memory values stay untouched.
    """

    samples: np.ndarray
    sample_rate: int = CANONICAL_SAMPLE_RATE

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples)
        if samples.dtype not in (np.float32, np.float64):
            samples = samples.astype(np.float32)
        if samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {samples.shape}")
        if samples.size < 1:
            raise ValueError("waveform must contain at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        self.samples = samples

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class SpectrogramScale:
    """One STFT analysis setting: FFT size, hop, window, mel/log options."""

    fft_size: int
    hop: int
    window: str = "hann"
    mel_bins: Optional[int] = None
    log_domain: bool = False

    def __post_init__(self) -> None:
        if self.fft_size < 2:
            raise ValueError(f"fft_size must be >= 2, got {self.fft_size}")
        if not 1 <= self.hop <= self.fft_size:
            raise ValueError(f"hop must be in [1, fft_size], got hop={self.hop} fft_size={self.fft_size}")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}; only 'hann' is implemented")
        if self.mel_bins is not None and not 1 <= self.mel_bins <= self.fft_size // 2 + 1:
            raise ValueError(f"mel_bins must be in [1, fft_size // 2 + 1], got {self.mel_bins}")

    @property
    def n_bins(self) -> int:
        return self.mel_bins if self.mel_bins is not None else self.fft_size // 2 + 1


@functools.lru_cache(maxsize=None)
def mel_filterbank(sample_rate: int, fft_size: int, n_mels: int) -> np.ndarray:
    """Triangular mel filterbank of shape [n_mels, fft_size // 2 + 1]."""

    def to_mel(hz):
        return 2595.0 * np.log10(1.0 + hz / 700.0)

    def to_hz(mel):
        return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)

    n_bins = fft_size // 2 + 1
    freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    anchors = to_hz(np.linspace(to_mel(0.0), to_mel(sample_rate / 2.0), n_mels + 2))
    bank = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, center, hi = anchors[i], anchors[i + 1], anchors[i + 2]
        rising = (freqs - lo) / max(center - lo, 1e-10)
        falling = (hi - freqs) / max(hi - center, 1e-10)
        bank[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    bank.flags.writeable = False
    return bank


def stft_magnitude(x: torch.Tensor, fft_size: int, hop: int) -> torch.Tensor:
    """Magnitude STFT of a batch of signals.

    Args:
        x: [batch, time] real tensor with time >= fft_size.
        fft_size: FFT length; the analysis window has the same length.
        hop: hop size in samples.

    Returns:
        [batch, frames, fft_size // 2 + 1] magnitudes, frames = time // hop + 1.
    """
    if x.dim() != 2:
        raise ValueError(f"expected [batch, time] input, got shape {tuple(x.shape)}")
    if x.shape[-1] < fft_size:
        raise ValueError(f"signal of {x.shape[-1]} samples is shorter than one {fft_size}-sample frame")
    window = torch.hann_window(fft_size, periodic=True, dtype=x.dtype, device=x.device)
    spec = torch.stft(
        x,
        n_fft=fft_size,
        hop_length=hop,
        window=window,
        center=True,
        pad_mode="reflect",
        return_complex=True,
    )
    return spec.abs().transpose(1, 2)


def apply_scale(mag: torch.Tensor, scale: SpectrogramScale, sample_rate: int) -> torch.Tensor:
    """Apply the mel projection and/or log of a scale to raw magnitudes."""
    out = mag
    if scale.mel_bins is not None:
        bank = torch.from_numpy(np.array(mel_filterbank(sample_rate, scale.fft_size, scale.mel_bins)))
        out = out @ bank.T.to(out.dtype)
    if scale.log_domain:
        out = torch.log(out + LOG_EPS)
    return out


def compute_spectrogram(w: Waveform, scale: SpectrogramScale) -> np.ndarray:
    """Spectrogram of a waveform under one scale, [frames x bins].

    Deterministic, float64 throughout. Linear scale is covariant in the
    input amplitude; log scale floors at log(LOG_EPS) for silence.
    """
    if len(w) < scale.fft_size:
        raise ValueError(f"waveform of {len(w)} samples is shorter than one {scale.fft_size}-sample frame")
    with torch.no_grad():
        x = torch.from_numpy(w.samples.astype(np.float64))[None]
        mag = stft_magnitude(x, scale.fft_size, scale.hop)
        out = apply_scale(mag, scale, w.sample_rate)
    return out[0].numpy()


class CropResult(NamedTuple):
    waveform: Waveform
    padded: bool
    start: int


def random_crop(
    w: Waveform,
    duration_s: float,
    rng_seed: Union[int, np.random.SeedSequence, list],
    align: int = 1,
) -> CropResult:
    """Crop to a fixed duration at a seeded random offset.

    Inputs shorter than the target are right-padded with zeros and flagged.
    ``align`` restricts the crop start to a multiple of that many samples.
    """
    target = int(round(duration_s * w.sample_rate))
    if target < 1:
        raise ValueError(f"crop duration {duration_s} s is shorter than one sample")
    if align < 1:
        raise ValueError(f"align must be >= 1, got {align}")
    if len(w) < target:
        out = np.zeros(target, dtype=w.samples.dtype)
        out[: len(w)] = w.samples
        return CropResult(Waveform(out, w.sample_rate), True, 0)
    rng = np.random.default_rng(rng_seed)
    n_starts = (len(w) - target) // align + 1
    start = int(rng.integers(0, n_starts)) * align
    return CropResult(Waveform(w.samples[start : start + target].copy(), w.sample_rate), False, start)


def pad_to_multiple(samples: np.ndarray, factor: int) -> tuple[np.ndarray, int]:
    """Right-pad with zeros so the length divides by factor; returns (samples, pad)."""
    pad = (-len(samples)) % factor
    if pad:
        samples = np.concatenate([samples, np.zeros(pad, dtype=samples.dtype)])
    return samples, pad


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono 16 kHz WAV file.

    Anything else is rejected; resampling or downmixing is the caller's
    job, not this reader's.
    """
    with wave.open(str(path), "rb") as f:
        n_channels = f.getnchannels()
        width = f.getsampwidth()
        rate = f.getframerate()
        if n_channels != 1:
            raise ValueError(f"{path}: expected mono audio, got {n_channels} channels")
        if width != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
        if rate != CANONICAL_SAMPLE_RATE:
            raise ValueError(f"{path}: expected {CANONICAL_SAMPLE_RATE} Hz, got {rate} Hz; resample before use")
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return Waveform(samples, CANONICAL_SAMPLE_RATE)


def write_wav(path, w: Waveform) -> None:
    """Write a waveform as 16-bit PCM, clamping samples to [-1, 1]."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
