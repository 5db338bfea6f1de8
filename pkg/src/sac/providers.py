"""Frozen feature providers: semantic features and speaker embeddings.

The systems these stand in for ship as large pretrained checkpoints that
this package does not depend on. The surrogates are small convolutional
nets frozen at a fixed seed: deterministic, gradient-free, and cheap. A
file-backed provider serves precomputed 50 Hz features by utterance id
for pipelines that extract features ahead of time.
"""

from __future__ import annotations

import abc
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from sac.audio import Waveform, pad_to_multiple
from sac.layers import StridedConv1d

FEATURE_RATE_HZ = 50
SAMPLES_PER_FEATURE_FRAME = 320  # 16000 / 50
_SURROGATE_STRIDES = (4, 4, 4, 5)

RECORD_MAGIC = b"SACF"


class SemanticProvider(abc.ABC):
    """Deterministic waveform -> 50 Hz feature map with frozen parameters."""

    d_sem: int

    @abc.abstractmethod
    def extract(self, w: Waveform, utterance_id: Optional[str] = None) -> torch.Tensor:
        """Return [t50, d_sem] features; must be gradient-free and repeatable."""


def _frozen_conv_stack(in_channels: int, hidden: int, out_channels: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    ch = in_channels
    for i, s in enumerate(_SURROGATE_STRIDES):
        nxt = out_channels if i == len(_SURROGATE_STRIDES) - 1 else hidden
        layers.append(StridedConv1d(ch, nxt, s))
        if i < len(_SURROGATE_STRIDES) - 1:
            layers.append(nn.ELU())
        ch = nxt
    return nn.Sequential(*layers)


class SurrogateSemanticEncoder(nn.Module, SemanticProvider):
    """Fixed-seed random conv encoder producing 50 Hz features.

    Stands in for a pretrained tokenizer backbone: frozen at construction,
    byte-stable across runs for the same (d_sem, seed).
    """

    def __init__(self, d_sem: int = 256, seed: int = 1234):
        super().__init__()
        self.d_sem = d_sem
        hidden = max(16, min(64, d_sem))
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.net = _frozen_conv_stack(1, hidden, d_sem)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [batch, time], time divisible by 320 -> [batch, t50, d_sem]
        with torch.no_grad():
            return self.net(x.unsqueeze(1)).transpose(1, 2)

    def extract(self, w: Waveform, utterance_id: Optional[str] = None) -> torch.Tensor:
        samples, _ = pad_to_multiple(w.samples.astype(np.float32), SAMPLES_PER_FEATURE_FRAME)
        x = torch.from_numpy(samples)[None]
        return self.forward(x)[0]


class PrecomputedSemanticProvider(SemanticProvider):
    """Serves features stored in per-utterance record files.

    The manifest is a text file with one record path per line. Lookup is
    by utterance id, which callers must supply to ``extract``.
    """

    def __init__(self, manifest_path):
        manifest_path = Path(manifest_path)
        self._paths: dict[str, Path] = {}
        self._cache: dict[str, tuple[np.ndarray, Optional[np.ndarray]]] = {}
        base = manifest_path.parent
        for line in manifest_path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            path = Path(line)
            if not path.is_absolute():
                path = base / path
            utt_id, _, _ = _read_record_header(path)
            self._paths[utt_id] = path
        if not self._paths:
            raise ValueError(f"{manifest_path}: no feature records listed")
        first = next(iter(self._paths))
        self.d_sem = int(self._load(first)[0].shape[1])

    def _load(self, utt_id: str) -> tuple[np.ndarray, Optional[np.ndarray]]:
        if utt_id not in self._cache:
            _, features, tokens = read_semantic_record(self._paths[utt_id])
            self._cache[utt_id] = (features, tokens)
        return self._cache[utt_id]

    def utterance_ids(self) -> list[str]:
        return sorted(self._paths)

    def extract(self, w: Waveform, utterance_id: Optional[str] = None) -> torch.Tensor:
        if utterance_id is None:
            raise ValueError("precomputed provider needs an utterance_id")
        if utterance_id not in self._paths:
            raise KeyError(f"no precomputed features for utterance {utterance_id!r}")
        features, _ = self._load(utterance_id)
        return torch.from_numpy(features)

    def tokens_for(self, utterance_id: str) -> Optional[np.ndarray]:
        return self._load(utterance_id)[1]


def write_semantic_record(path, utterance_id: str, features: np.ndarray, tokens: np.ndarray) -> None:
    """Write one utterance's features and token indices to a binary record.

    Layout: magic, u16 id length, utf-8 id, u32 frame count, u32 feature
    dim, float32 LE row-major features, u32 token count, u32 LE tokens.
    All integers little-endian.
    """
    features = np.ascontiguousarray(features, dtype="<f4")
    if features.ndim != 2:
        raise ValueError(f"features must be [t50, d_sem], got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite values")
    if tokens is None:
        tokens = np.empty(0, dtype="<u4")
    tokens = np.ascontiguousarray(tokens, dtype="<u4")
    id_bytes = utterance_id.encode("utf-8")
    with open(path, "wb") as f:
        f.write(RECORD_MAGIC)
        f.write(struct.pack("<H", len(id_bytes)))
        f.write(id_bytes)
        f.write(struct.pack("<II", features.shape[0], features.shape[1]))
        f.write(features.tobytes())
        f.write(struct.pack("<I", tokens.size))
        f.write(tokens.tobytes())


def _read_record_header(path) -> tuple[str, int, int]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != RECORD_MAGIC:
            raise ValueError(f"{path}: not a semantic feature record (bad magic {magic!r})")
        (id_len,) = struct.unpack("<H", f.read(2))
        utt_id = f.read(id_len).decode("utf-8")
        t50, d_sem = struct.unpack("<II", f.read(8))
    return utt_id, t50, d_sem


def read_semantic_record(path) -> tuple[str, np.ndarray, Optional[np.ndarray]]:
    """Read a record written by write_semantic_record."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != RECORD_MAGIC:
        raise ValueError(f"{path}: not a semantic feature record (bad magic {data[:4]!r})")
    offset = 4
    (id_len,) = struct.unpack_from("<H", data, offset)
    offset += 2
    utt_id = data[offset : offset + id_len].decode("utf-8")
    offset += id_len
    t50, d_sem = struct.unpack_from("<II", data, offset)
    offset += 8
    n_floats = t50 * d_sem
    features = np.frombuffer(data, dtype="<f4", count=n_floats, offset=offset).reshape(t50, d_sem)
    offset += 4 * n_floats
    (n_tokens,) = struct.unpack_from("<I", data, offset)
    offset += 4
    tokens = None
    if n_tokens:
        tokens = np.frombuffer(data, dtype="<u4", count=n_tokens, offset=offset).astype(np.int64)
    if not np.all(np.isfinite(features)):
        raise ValueError(f"{path}: record contains non-finite features")
    return utt_id, np.array(features, dtype=np.float32), tokens


class SurrogateSpeakerEncoder(nn.Module):
    """Fixed-seed frozen conv net mapping a waveform to one embedding.

    Features are mean/std-pooled over time before the output projection,
    so the embedding depends on what was said far less than on the broad
    spectral envelope, which is all a supervision target needs here.
    """

    def __init__(self, d_spk: int = 192, seed: int = 4321):
        super().__init__()
        self.d_spk = d_spk
        hidden = 32
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.net = _frozen_conv_stack(1, hidden, hidden)
            self.proj = nn.Linear(2 * hidden, d_spk)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [batch, time], time divisible by 320 -> [batch, d_spk]
        with torch.no_grad():
            h = self.net(x.unsqueeze(1))
            pooled = torch.cat([h.mean(dim=-1), h.std(dim=-1, correction=0)], dim=-1)
            return self.proj(pooled)

    def embed(self, w: Waveform) -> torch.Tensor:
        samples, _ = pad_to_multiple(w.samples.astype(np.float32), SAMPLES_PER_FEATURE_FRAME)
        return self.forward(torch.from_numpy(samples)[None])[0]
