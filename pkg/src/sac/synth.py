"""Synthetic test corpus: modulated sinusoid mixtures plus noise.

Not speech, but speech-shaped enough for smoke training and metric
sanity checks: a few tones in the voice band, a slow syllable-rate
amplitude envelope, and a broadband noise floor so every third-octave
band carries energy.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from sac.audio import CANONICAL_SAMPLE_RATE, Waveform, write_wav


def synthetic_utterance(
    seed,
    duration_s: float | None = None,
    sample_rate: int = CANONICAL_SAMPLE_RATE,
    snr_db_range: tuple[float, float] | None = (20.0, 30.0),
) -> Waveform:
    """One deterministic utterance: 2 to 4 modulated tones over noise.

    snr_db_range=None drops the noise floor entirely, leaving a sparse
    line spectrum.
    """
    rng = np.random.default_rng(seed)
    duration = duration_s if duration_s is not None else float(rng.uniform(1.0, 3.0))
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    n_tones = int(rng.integers(2, 5))
    signal = np.zeros(n)
    for _ in range(n_tones):
        freq = float(np.exp(rng.uniform(np.log(100.0), np.log(2400.0))))
        phase = float(rng.uniform(0, 2 * np.pi))
        amp = float(rng.uniform(0.4, 1.0)) / n_tones
        signal += amp * np.sin(2 * np.pi * freq * t + phase)
    env_rate = float(rng.uniform(2.0, 6.0))
    env_phase = float(rng.uniform(0, 2 * np.pi))
    signal *= 0.55 + 0.45 * np.sin(2 * np.pi * env_rate * t + env_phase)
    x = signal
    if snr_db_range is not None:
        snr_db = float(rng.uniform(*snr_db_range))
        noise = rng.normal(0.0, 1.0, n)
        noise *= np.sqrt((signal**2).mean() / 10 ** (snr_db / 10)) / max(np.sqrt((noise**2).mean()), 1e-12)
        x = signal + noise
    x *= 0.7 / max(np.abs(x).max(), 1e-12)
    return Waveform(x.astype(np.float32), sample_rate)


def make_synthetic_corpus(
    out_dir,
    n_utterances: int = 32,
    seed: int = 0,
    snr_db_range: tuple[float, float] | None = (20.0, 30.0),
    duration_s: float | None = None,
) -> list[Path]:
    """Write a deterministic WAV corpus; returns the file paths in order.

    duration_s=None draws a random length per utterance; a fixed value makes
    every file exactly that long.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_utterances):
        w = synthetic_utterance([seed, i], duration_s=duration_s, snr_db_range=snr_db_range)
        path = out_dir / f"utt_{i:03d}.wav"
        write_wav(path, w)
        paths.append(path)
    return paths


def write_manifest(paths, manifest_path, record_paths=None) -> Path:
    """Write a training manifest: one WAV path per line, optional record column."""
    manifest_path = Path(manifest_path)
    lines = []
    for i, p in enumerate(paths):
        if record_paths is not None:
            lines.append(f"{p}\t{record_paths[i]}")
        else:
            lines.append(str(p))
    manifest_path.write_text("\n".join(lines) + "\n")
    return manifest_path
