"""Dual-stream neural speech codec: a frozen semantic token stream plus a
trainable acoustic stream, fused and decoded back to 16 kHz waveforms."""

from sac.audio import Waveform, read_wav, write_wav
from sac.bitstream import SacStream, bitrate, decode, deserialize, encode, serialize
from sac.decoder import ReconstructionPattern
from sac.config import RunConfig, build_discriminators, build_model, load_model_from_checkpoint
from sac.model import SacModel, SacModelConfig
from sac.synth import make_synthetic_corpus, synthetic_utterance, write_manifest
from sac.training import CropDataset, TrainConfig, Trainer

__version__ = "0.1.0"

__all__ = [
    "Waveform",
    "read_wav",
    "write_wav",
    "SacStream",
    "serialize",
    "deserialize",
    "encode",
    "decode",
    "bitrate",
    "ReconstructionPattern",
    "RunConfig",
    "build_model",
    "build_discriminators",
    "load_model_from_checkpoint",
    "SacModel",
    "SacModelConfig",
    "TrainConfig",
    "Trainer",
    "CropDataset",
    "make_synthetic_corpus",
    "synthetic_utterance",
    "write_manifest",
    "__version__",
]
