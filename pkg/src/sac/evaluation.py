"""Reconstruction metrics, linear probing, and mel-spectrogram figures.

Everything here is computable without external pretrained scorers. The
report schema reserves optional fields (wer, utmos, pesq, sim) so values
produced by outside systems can be merged from a JSON file keyed by
utterance id.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.signal import resample_poly

from sac.audio import (
    LOG_EPS,
    SpectrogramScale,
    Waveform,
    compute_spectrogram,
    read_wav,
    stft_magnitude,
)
from sac.model import SacModel
from sac.providers import SurrogateSpeakerEncoder
from sac.quantize import CodebookStats

logger = logging.getLogger(__name__)

# STOI analysis constants (10 kHz, 25.6 ms frames, 384 ms segments).
_STOI_RATE = 10_000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_FFT = 512
_STOI_NUM_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEGMENT = 30
_STOI_BETA = -15.0
_STOI_DYN_RANGE = 40.0

_LSD_FFT = 1024
_LSD_HOP = 256


def _stoi_window() -> np.ndarray:
    # Symmetric Hann without the zero endpoints.
    return np.hanning(_STOI_FRAME + 2)[1:-1]


def _third_octave_bands(sr: int, fft_size: int) -> np.ndarray:
    """Boolean [bands, bins] matrix selecting FFT bins per 1/3-octave band."""
    freqs = np.linspace(0, sr, fft_size + 1)[: fft_size // 2 + 1]
    k = np.arange(_STOI_NUM_BANDS)
    center = _STOI_MIN_FREQ * 2.0 ** (k / 3.0)
    lo = np.sqrt(center * _STOI_MIN_FREQ * 2.0 ** ((k - 1) / 3.0))
    hi = np.sqrt(center * _STOI_MIN_FREQ * 2.0 ** ((k + 1) / 3.0))
    bands = np.zeros((_STOI_NUM_BANDS, freqs.size), dtype=bool)
    for i in range(_STOI_NUM_BANDS):
        lo_bin = int(np.argmin((freqs - lo[i]) ** 2))
        hi_bin = int(np.argmin((freqs - hi[i]) ** 2))
        bands[i, lo_bin:hi_bin] = True
    return bands


def _remove_silent_frames(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Drop frames more than 40 dB below the loudest frame of the reference."""
    w = _stoi_window()
    starts = np.arange(0, len(x) - _STOI_FRAME + 1, _STOI_HOP)
    if starts.size == 0:
        raise ValueError(f"signal too short for intelligibility analysis: {len(x)} samples at {_STOI_RATE} Hz")
    energy = np.empty(starts.size)
    for j, s in enumerate(starts):
        energy[j] = 20 * np.log10(np.linalg.norm(x[s : s + _STOI_FRAME] * w) + 1e-12)
    keep = energy > energy.max() - _STOI_DYN_RANGE
    if not keep.any():
        raise ValueError("no frames above the silence threshold")
    n_kept = int(keep.sum())
    out_len = (n_kept - 1) * _STOI_HOP + _STOI_FRAME
    x_out = np.zeros(out_len)
    y_out = np.zeros(out_len)
    count = 0
    for j, s in enumerate(starts):
        if not keep[j]:
            continue
        o = count * _STOI_HOP
        x_out[o : o + _STOI_FRAME] += x[s : s + _STOI_FRAME] * w
        y_out[o : o + _STOI_FRAME] += y[s : s + _STOI_FRAME] * w
        count += 1
    return x_out, y_out


def _stoi_band_magnitudes(x: np.ndarray, bands: np.ndarray) -> np.ndarray:
    """Windowed STFT collapsed to 1/3-octave band magnitudes, [bands, frames]."""
    w = _stoi_window()
    starts = np.arange(0, len(x) - _STOI_FRAME + 1, _STOI_HOP)
    frames = np.stack([x[s : s + _STOI_FRAME] * w for s in starts])
    spec = np.fft.rfft(frames, n=_STOI_FFT, axis=1)
    power = np.abs(spec) ** 2
    return np.sqrt(power @ bands.T).T


def stoi(ref: Waveform, deg: Waveform) -> float:
    """Short-time objective intelligibility of deg against ref.

    Both signals are resampled to 10 kHz, silent frames are removed using
    the reference energy profile, and clipped normalized correlations are
    averaged over 1/3-octave bands and 384 ms segments. Identical inputs
    score 1.0; the score is scale-invariant per band.
    """
    if len(ref) != len(deg):
        raise ValueError(f"length mismatch: ref has {len(ref)} samples, deg has {len(deg)}")
    if ref.sample_rate != deg.sample_rate:
        raise ValueError(f"sample rate mismatch: {ref.sample_rate} vs {deg.sample_rate}")
    ratio = Fraction(_STOI_RATE, ref.sample_rate)
    x = resample_poly(ref.samples.astype(np.float64), ratio.numerator, ratio.denominator)
    y = resample_poly(deg.samples.astype(np.float64), ratio.numerator, ratio.denominator)
    x, y = _remove_silent_frames(x, y)
    bands = _third_octave_bands(_STOI_RATE, _STOI_FFT)
    X = _stoi_band_magnitudes(x, bands)
    Y = _stoi_band_magnitudes(y, bands)
    n_frames = X.shape[1]
    if n_frames < _STOI_SEGMENT:
        raise ValueError(
            f"signal too short: {n_frames} frames after silence removal, need {_STOI_SEGMENT}"
        )
    clip_gain = 10 ** (-_STOI_BETA / 20)
    scores = []
    for m in range(_STOI_SEGMENT, n_frames + 1):
        X_seg = X[:, m - _STOI_SEGMENT : m]
        Y_seg = Y[:, m - _STOI_SEGMENT : m]
        alpha = np.sqrt(np.sum(X_seg**2, axis=1) / (np.sum(Y_seg**2, axis=1) + 1e-12))
        Y_scaled = Y_seg * alpha[:, None]
        Y_prime = np.minimum(Y_scaled, X_seg * (1 + clip_gain))
        xn = X_seg - X_seg.mean(axis=1, keepdims=True)
        yn = Y_prime - Y_prime.mean(axis=1, keepdims=True)
        xn = xn / (np.linalg.norm(xn, axis=1, keepdims=True) + 1e-12)
        yn = yn / (np.linalg.norm(yn, axis=1, keepdims=True) + 1e-12)
        scores.append(np.sum(xn * yn, axis=1))
    return float(np.mean(np.stack(scores)))


def log_spectral_distance(ref: Waveform, deg: Waveform) -> float:
    """RMS log-magnitude spectral distance in dB, averaged over frames."""
    if len(ref) != len(deg):
        raise ValueError(f"length mismatch: ref has {len(ref)} samples, deg has {len(deg)}")
    x = torch.from_numpy(ref.samples.astype(np.float32))[None]
    y = torch.from_numpy(deg.samples.astype(np.float32))[None]
    sx = 20 * torch.log10(stft_magnitude(x, _LSD_FFT, _LSD_HOP) + LOG_EPS)
    sy = 20 * torch.log10(stft_magnitude(y, _LSD_FFT, _LSD_HOP) + LOG_EPS)
    per_frame = torch.sqrt(((sx - sy) ** 2).mean(dim=-1))
    return float(per_frame.mean())


def speaker_cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"embedding shape mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("zero-norm embedding")
    return float(np.dot(a, b) / (na * nb))


def mean_pairwise_similarity(embeddings: np.ndarray) -> float:
    """Mean cosine similarity over all unordered pairs; near 1.0 means the
    set has collapsed to one voice."""
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 2:
        raise ValueError(f"need at least two embeddings, got shape {e.shape}")
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("zero-norm embedding in set")
    unit = e / norms
    gram = unit @ unit.T
    idx = np.triu_indices(e.shape[0], k=1)
    return float(gram[idx].mean())


@dataclass
class EvalReport:
    """Per-utterance metric bundle; optional fields are merged from
    externally computed JSON when available."""

    stoi: float
    log_spectral_distance_dB: float
    speaker_cosine: float
    sem_utilization: Optional[float] = None
    sem_perplexity: Optional[float] = None
    ac_utilization: Optional[float] = None
    ac_perplexity: Optional[float] = None
    wer: Optional[float] = None
    utmos: Optional[float] = None
    pesq: Optional[float] = None
    sim: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("stoi", "log_spectral_distance_dB", "speaker_cosine"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        # Correlations can dip below zero on adversarial inputs; the
        # reported score is floored so the field stays in [0, 1].
        self.stoi = min(max(self.stoi, 0.0), 1.0)
        if self.log_spectral_distance_dB < 0:
            raise ValueError(f"log_spectral_distance_dB must be nonnegative, got {self.log_spectral_distance_dB}")
        if not -1.0 <= self.speaker_cosine <= 1.0 + 1e-9:
            raise ValueError(f"speaker_cosine out of [-1, 1]: {self.speaker_cosine}")

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def evaluate_pair(
    ref: Waveform,
    deg: Waveform,
    speaker_encoder: Optional[SurrogateSpeakerEncoder] = None,
    sem_stats: Optional[CodebookStats] = None,
    ac_stats: Optional[CodebookStats] = None,
) -> EvalReport:
    if speaker_encoder is None:
        speaker_encoder = _default_speaker_encoder()
    e_ref = speaker_encoder.embed(ref)
    e_deg = speaker_encoder.embed(deg)
    return EvalReport(
        stoi=stoi(ref, deg),
        log_spectral_distance_dB=log_spectral_distance(ref, deg),
        speaker_cosine=speaker_cosine(e_ref, e_deg),
        sem_utilization=sem_stats.utilization if sem_stats else None,
        sem_perplexity=sem_stats.perplexity if sem_stats else None,
        ac_utilization=ac_stats.utilization if ac_stats else None,
        ac_perplexity=ac_stats.perplexity if ac_stats else None,
    )


_SPEAKER_ENCODER_CACHE: List[SurrogateSpeakerEncoder] = []


def _default_speaker_encoder() -> SurrogateSpeakerEncoder:
    if not _SPEAKER_ENCODER_CACHE:
        _SPEAKER_ENCODER_CACHE.append(SurrogateSpeakerEncoder())
    return _SPEAKER_ENCODER_CACHE[0]


def evaluate_directory(ref_dir, deg_dir, num_workers: int = 1) -> Dict[str, EvalReport]:
    """Pair files by basename and evaluate each pair.

    Returns one report per basename stem. Files present on only one side
    are skipped with a warning.
    """
    ref_dir, deg_dir = Path(ref_dir), Path(deg_dir)
    refs = {p.stem: p for p in sorted(ref_dir.glob("*.wav"))}
    degs = {p.stem: p for p in sorted(deg_dir.glob("*.wav"))}
    shared = sorted(set(refs) & set(degs))
    for stem in sorted(set(refs) ^ set(degs)):
        logger.warning("unpaired file skipped: %s", stem)
    if not shared:
        raise ValueError(f"no paired WAV files between {ref_dir} and {deg_dir}")
    encoder = _default_speaker_encoder()

    def one(stem: str) -> Tuple[str, EvalReport]:
        return stem, evaluate_pair(read_wav(refs[stem]), read_wav(degs[stem]), encoder)

    if num_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=num_workers) as pool:
            results = dict(pool.map(one, shared))
    else:
        results = dict(one(s) for s in shared)
    return results


def aggregate_reports(reports: Dict[str, EvalReport]) -> dict:
    keys = ("stoi", "log_spectral_distance_dB", "speaker_cosine")
    return {k: float(np.mean([getattr(r, k) for r in reports.values()])) for k in keys}


def merge_external_metrics(reports: Dict[str, EvalReport], external: dict) -> None:
    """Fill the reserved fields (wer, utmos, pesq, sim) from a JSON-shaped
    dict keyed by utterance id. Unknown ids and fields are rejected."""
    allowed = {"wer", "utmos", "pesq", "sim"}
    for utt_id, values in external.items():
        if utt_id not in reports:
            raise KeyError(f"external metrics reference unknown utterance {utt_id!r}")
        bad = set(values) - allowed
        if bad:
            raise ValueError(f"unknown external metric fields for {utt_id!r}: {sorted(bad)}")
        for k, v in values.items():
            setattr(reports[utt_id], k, float(v))


@dataclass
class ProbeTask:
    """Labeled waveforms for linear probing."""

    items: List[Tuple[Waveform, int]]
    num_classes: int

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        counts = np.bincount(self.labels, minlength=self.num_classes)
        if (counts[: self.num_classes] < 2).any():
            raise ValueError(f"every class needs at least 2 items, got counts {counts.tolist()}")
        if len(np.unique(self.labels)) < 2:
            raise ValueError("labels contain fewer than 2 distinct classes")

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.items], dtype=np.int64)


def probe_linear(features: np.ndarray, task: ProbeTask, split_seed: int = 0) -> float:
    """Test accuracy of an L2-regularized linear classifier on pooled features.

    The split is stratified 80/20 and deterministic under split_seed.
    """
    from sklearn.linear_model import LogisticRegression
    from sklearn.model_selection import train_test_split

    features = np.asarray(features, dtype=np.float64)
    labels = task.labels
    if features.ndim != 2 or features.shape[0] != len(labels):
        raise ValueError(f"features must be [{len(labels)}, d], got {features.shape}")
    if not np.isfinite(features).all():
        raise ValueError("features contain non-finite values")
    x_train, x_test, y_train, y_test = train_test_split(
        features, labels, test_size=0.2, stratify=labels, random_state=split_seed
    )
    # Penalty weight 1e-4 expressed through sklearn's inverse parameter.
    clf = LogisticRegression(C=1e4, max_iter=1000, solver="lbfgs")
    clf.fit(x_train, y_train)
    return float(clf.score(x_test, y_test))


@torch.no_grad()
def stream_probe_features(model: SacModel, waveforms: Sequence[Waveform]) -> np.ndarray:
    """Time-pooled quantized embeddings from both streams, concatenated.

    Output width is d_sem + d_model: mean semantic codebook vectors then
    mean up-projected acoustic code vectors per utterance.
    """
    model.eval()
    rows = []
    for w in waveforms:
        enc = model.encode_waveform(w)
        s_q = model.semantic_codebook.entries.detach()[
            torch.from_numpy(enc.semantic_tokens.astype(np.int64))
        ]
        z_q = model.acoustic_codebook.entries.detach()[
            torch.from_numpy(enc.acoustic_tokens.astype(np.int64))
        ]
        a_q = model.projection.up(z_q)
        rows.append(torch.cat([s_q.mean(dim=0), a_q.mean(dim=0)]).numpy())
    return np.stack(rows)


def emit_mel_figure(panels: Dict[str, Waveform], out_path) -> Dict[str, np.ndarray]:
    """Write a stacked log-mel comparison figure, one row per labeled
    waveform, all rows sharing one color scale. Returns the matrices."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not panels:
        raise ValueError("no waveforms to plot")
    scale = SpectrogramScale(fft_size=1024, hop=256, mel_bins=80, log_domain=True)
    mels = {label: compute_spectrogram(w, scale) for label, w in panels.items()}
    vmin = min(float(m.min()) for m in mels.values())
    vmax = max(float(m.max()) for m in mels.values())
    if vmax == vmin:
        vmax = vmin + 1.0
    n = len(mels)
    fig, axes = plt.subplots(n, 1, figsize=(8, 2.2 * n), squeeze=False)
    for ax, (label, m) in zip(axes[:, 0], mels.items()):
        w = panels[label]
        extent = (0.0, len(w) / w.sample_rate, 0.0, w.sample_rate / 2)
        ax.imshow(m.T, origin="lower", aspect="auto", vmin=vmin, vmax=vmax, extent=extent, cmap="magma")
        ax.set_title(label)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("freq (Hz)")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return mels


def report_to_json(reports: Dict[str, EvalReport], path) -> None:
    payload = {utt_id: r.as_dict() for utt_id, r in reports.items()}
    payload["_aggregate"] = aggregate_reports(reports)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
