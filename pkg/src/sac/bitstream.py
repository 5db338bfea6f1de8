"""Bit-exact token container and the waveform-level encode/decode API.

Layout: a fixed big-endian header followed by the semantic token block
then the acoustic token block, each token packed MSB-first at
ceil(log2 K) bits, zero-padded to a byte boundary. Frame rates are
stored in centi-Hz so 12.5 Hz is exact. A stream with no acoustic block
stores an acoustic rate of zero and decodes as semantic-only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from sac.audio import Waveform
from sac.decoder import ReconstructionPattern
from sac.model import SacModel
from sac.semantic import SEMANTIC_RATE_HZ

MAGIC = b"SAC1"
VERSION = 1
SEMANTIC_RATE_CENTIHZ = 1250

# magic, version, sample_rate, sem_rate, ac_rate, k_sem, k_ac, n_sem, n_ac, original_length
_HEADER = struct.Struct(">4sB8I")


def token_bits(k: int) -> int:
    """Bits needed per token index: ceil(log2 k)."""
    if k < 2:
        raise ValueError(f"codebook size must be >= 2, got {k}")
    return (k - 1).bit_length()


@dataclass
class SacStream:
    """Header fields and token payload of one encoded utterance."""

    sample_rate: int
    semantic_rate_centihz: int
    acoustic_rate_centihz: int  # 0 when the stream carries no acoustic block
    k_sem: int
    k_ac: int
    semantic_tokens: np.ndarray
    acoustic_tokens: np.ndarray
    original_length_samples: int

    def __post_init__(self) -> None:
        self.semantic_tokens = np.asarray(self.semantic_tokens, dtype=np.uint32)
        self.acoustic_tokens = np.asarray(self.acoustic_tokens, dtype=np.uint32)
        for name, tokens, k in (
            ("semantic", self.semantic_tokens, self.k_sem),
            ("acoustic", self.acoustic_tokens, self.k_ac),
        ):
            if tokens.size and int(tokens.max()) >= 1 << token_bits(k):
                raise ValueError(f"{name} token exceeds the {token_bits(k)}-bit packing width for k={k}")

    @property
    def has_acoustic(self) -> bool:
        return self.acoustic_tokens.size > 0

    def bits_per_second(self) -> float:
        return bitrate(self)


class _BitWriter:
    def __init__(self) -> None:
        self._bytes = bytearray()
        self._acc = 0
        self._n = 0

    def write(self, value: int, bits: int) -> None:
        # MSB-first within the stream.
        self._acc = (self._acc << bits) | (value & ((1 << bits) - 1))
        self._n += bits
        while self._n >= 8:
            self._n -= 8
            self._bytes.append((self._acc >> self._n) & 0xFF)
        self._acc &= (1 << self._n) - 1

    def getvalue(self) -> bytes:
        out = bytes(self._bytes)
        if self._n:
            out += bytes([(self._acc << (8 - self._n)) & 0xFF])
        return out


class _BitReader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0  # bit position

    def read(self, bits: int) -> int:
        value = 0
        for _ in range(bits):
            byte = self._data[self._pos >> 3]
            value = (value << 1) | ((byte >> (7 - (self._pos & 7))) & 1)
            self._pos += 1
        return value

    @property
    def bits_left(self) -> int:
        return len(self._data) * 8 - self._pos


def serialize(stream: SacStream) -> bytes:
    """Pack a stream into its binary container."""
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        stream.sample_rate,
        stream.semantic_rate_centihz,
        stream.acoustic_rate_centihz,
        stream.k_sem,
        stream.k_ac,
        stream.semantic_tokens.size,
        stream.acoustic_tokens.size,
        stream.original_length_samples,
    )
    writer = _BitWriter()
    b_sem = token_bits(stream.k_sem)
    for t in stream.semantic_tokens:
        writer.write(int(t), b_sem)
    b_ac = token_bits(stream.k_ac)
    for t in stream.acoustic_tokens:
        writer.write(int(t), b_ac)
    return header + writer.getvalue()


def deserialize(data: bytes) -> SacStream:
    """Parse a binary container back into header fields and tokens.

    Token values are accepted as long as they fit the packing width;
    range checks against a model's codebooks happen at decode time.
    """
    if len(data) < _HEADER.size:
        raise ValueError(f"container truncated: {len(data)} bytes is shorter than the {_HEADER.size}-byte header")
    magic, version, sample_rate, sem_rate, ac_rate, k_sem, k_ac, n_sem, n_ac, original = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"not a SAC stream (magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    payload = data[_HEADER.size :]
    b_sem, b_ac = token_bits(k_sem), token_bits(k_ac)
    need = n_sem * b_sem + n_ac * b_ac
    if len(payload) * 8 < need:
        raise ValueError(f"container truncated: payload has {len(payload) * 8} bits, header promises {need}")
    reader = _BitReader(payload)
    sem = np.array([reader.read(b_sem) for _ in range(n_sem)], dtype=np.uint32)
    ac = np.array([reader.read(b_ac) for _ in range(n_ac)], dtype=np.uint32)
    return SacStream(sample_rate, sem_rate, ac_rate, k_sem, k_ac, sem, ac, original)


def bitrate(stream: SacStream) -> float:
    """Payload bits per second implied by the header rates and codebook sizes.

    Header overhead is excluded. An absent acoustic block (rate 0)
    contributes nothing.
    """
    rate = (stream.semantic_rate_centihz / 100.0) * token_bits(stream.k_sem)
    if stream.acoustic_rate_centihz:
        rate += (stream.acoustic_rate_centihz / 100.0) * token_bits(stream.k_ac)
    return rate


def encode(w: Waveform, model: SacModel, semantic_only: bool = False) -> SacStream:
    """Tokenize a waveform into a stream; optionally drop the acoustic block."""
    result = model.encode_waveform(w)
    acoustic = np.zeros(0, dtype=np.uint32) if semantic_only else result.acoustic_tokens
    return SacStream(
        sample_rate=model.config.sample_rate,
        semantic_rate_centihz=SEMANTIC_RATE_CENTIHZ,
        acoustic_rate_centihz=0 if semantic_only else model.frame_rate * 100,
        k_sem=model.config.k_sem,
        k_ac=model.config.k_ac,
        semantic_tokens=result.semantic_tokens,
        acoustic_tokens=acoustic,
        original_length_samples=result.original_length,
    )


def decode(
    stream: SacStream,
    model: SacModel,
    pattern: ReconstructionPattern = ReconstructionPattern.FULL,
) -> Waveform:
    """Render a stream back to audio under a reconstruction pattern.

    The header must agree with the model; every mismatching field is
    listed in the error. A stream without an acoustic block always
    decodes semantic-only.
    """
    mismatches = []
    if stream.sample_rate != model.config.sample_rate:
        mismatches.append(f"sample_rate: stream {stream.sample_rate}, model {model.config.sample_rate}")
    if stream.semantic_rate_centihz != SEMANTIC_RATE_CENTIHZ:
        mismatches.append(f"semantic_rate_centihz: stream {stream.semantic_rate_centihz}, expected {SEMANTIC_RATE_CENTIHZ}")
    if stream.k_sem != model.config.k_sem:
        mismatches.append(f"k_sem: stream {stream.k_sem}, model {model.config.k_sem}")
    if stream.k_ac != model.config.k_ac:
        mismatches.append(f"k_ac: stream {stream.k_ac}, model {model.config.k_ac}")
    if stream.has_acoustic and stream.acoustic_rate_centihz != model.frame_rate * 100:
        mismatches.append(f"acoustic_rate_centihz: stream {stream.acoustic_rate_centihz}, model {model.frame_rate * 100}")
    if mismatches:
        raise ValueError("stream/model mismatch: " + "; ".join(mismatches))
    if stream.has_acoustic:
        factor = int(round(model.frame_rate / SEMANTIC_RATE_HZ))
        expected_ac = stream.semantic_tokens.size * factor
        if stream.acoustic_tokens.size != expected_ac:
            raise ValueError(
                f"frame counts inconsistent: {stream.semantic_tokens.size} semantic frames imply "
                f"{expected_ac} acoustic frames, stream has {stream.acoustic_tokens.size}"
            )
        acoustic = stream.acoustic_tokens
    else:
        pattern = ReconstructionPattern.SEMANTIC_ONLY
        acoustic = None
    return model.decode_tokens(
        stream.semantic_tokens,
        acoustic,
        pattern,
        original_length=stream.original_length_samples,
    )


def write_stream(path, stream: SacStream) -> None:
    with open(path, "wb") as f:
        f.write(serialize(stream))


def read_stream(path) -> SacStream:
    with open(path, "rb") as f:
        return deserialize(f.read())
