import numpy as np
import pytest
import torch

from sac.providers import (
    FEATURE_RATE_HZ,
    SAMPLES_PER_FEATURE_FRAME,
    PrecomputedSemanticProvider,
    SurrogateSemanticEncoder,
    SurrogateSpeakerEncoder,
    read_semantic_record,
    write_semantic_record,
)
from tests.conftest import rand_wave


class TestSurrogateSemanticEncoder:
    def test_deterministic_across_instances(self):
        w = rand_wave(0, seconds=0.5)
        a = SurrogateSemanticEncoder(d_sem=32, seed=9).extract(w)
        b = SurrogateSemanticEncoder(d_sem=32, seed=9).extract(w)
        assert torch.equal(a, b)

    def test_seed_changes_output(self):
        w = rand_wave(0, seconds=0.5)
        a = SurrogateSemanticEncoder(d_sem=32, seed=9).extract(w)
        b = SurrogateSemanticEncoder(d_sem=32, seed=10).extract(w)
        assert not torch.equal(a, b)

    def test_output_rate(self):
        enc = SurrogateSemanticEncoder(d_sem=16, seed=1)
        assert FEATURE_RATE_HZ == 50
        assert SAMPLES_PER_FEATURE_FRAME == 320
        for seconds, frames in ((1.0, 50), (0.5, 25), (0.322, 17)):
            w = rand_wave(1, seconds=seconds)
            f = enc.extract(w)
            assert f.shape == (frames, 16)

    def test_parameters_frozen(self):
        enc = SurrogateSemanticEncoder(d_sem=16, seed=1)
        assert all(not p.requires_grad for p in enc.parameters())
        assert not enc.training

    def test_batched_forward(self):
        enc = SurrogateSemanticEncoder(d_sem=16, seed=1)
        x = torch.randn(3, 3200)
        out = enc(x)
        assert out.shape == (3, 10, 16)


class TestSemanticRecords:
    def test_round_trip_with_tokens(self, tmp_path):
        features = np.random.default_rng(0).standard_normal((40, 16)).astype(np.float32)
        tokens = np.arange(10, dtype=np.uint32)
        path = tmp_path / "utt.rec"
        write_semantic_record(path, "utt_007", features, tokens)
        utt_id, back_f, back_t = read_semantic_record(path)
        assert utt_id == "utt_007"
        np.testing.assert_array_equal(back_f, features)
        np.testing.assert_array_equal(back_t, tokens)

    def test_round_trip_without_tokens(self, tmp_path):
        features = np.zeros((4, 8), dtype=np.float32)
        path = tmp_path / "utt.rec"
        write_semantic_record(path, "x", features, None)
        _, back_f, back_t = read_semantic_record(path)
        np.testing.assert_array_equal(back_f, features)
        assert back_t is None

    def test_rejects_non_finite(self, tmp_path):
        features = np.full((4, 8), np.nan, dtype=np.float32)
        with pytest.raises(ValueError):
            write_semantic_record(tmp_path / "bad.rec", "x", features, None)


class TestPrecomputedProvider:
    @pytest.fixture
    def provider(self, tmp_path):
        records = []
        for i in range(3):
            features = np.random.default_rng(i).standard_normal((20, 8)).astype(np.float32)
            path = tmp_path / f"utt_{i}.rec"
            write_semantic_record(path, f"utt_{i}", features, None)
            records.append(path)
        manifest = tmp_path / "records.txt"
        manifest.write_text("\n".join(str(p) for p in records) + "\n")
        return PrecomputedSemanticProvider(manifest)

    def test_lookup_by_id(self, provider):
        f = provider.extract(rand_wave(0, seconds=0.4), utterance_id="utt_1")
        assert f.shape == (20, 8)
        assert provider.d_sem == 8

    def test_utterance_ids(self, provider):
        assert provider.utterance_ids() == ["utt_0", "utt_1", "utt_2"]

    def test_unknown_id(self, provider):
        with pytest.raises(KeyError):
            provider.extract(rand_wave(0), utterance_id="missing")

    def test_id_required(self, provider):
        with pytest.raises(ValueError):
            provider.extract(rand_wave(0))

    def test_empty_manifest(self, tmp_path):
        manifest = tmp_path / "empty.txt"
        manifest.write_text("\n")
        with pytest.raises(ValueError):
            PrecomputedSemanticProvider(manifest)


class TestSurrogateSpeakerEncoder:
    def test_deterministic(self):
        w = rand_wave(3, seconds=0.7)
        a = SurrogateSpeakerEncoder(d_spk=64, seed=2).embed(w)
        b = SurrogateSpeakerEncoder(d_spk=64, seed=2).embed(w)
        assert torch.equal(a, b)

    def test_shapes(self):
        enc = SurrogateSpeakerEncoder(d_spk=48, seed=2)
        out = enc(torch.randn(2, 3200))
        assert out.shape == (2, 48)
        e = enc.embed(rand_wave(1, seconds=0.4))
        assert e.shape == (48,)

    def test_frozen(self):
        enc = SurrogateSpeakerEncoder(d_spk=48, seed=2)
        assert all(not p.requires_grad for p in enc.parameters())
