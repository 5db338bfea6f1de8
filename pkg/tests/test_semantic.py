import numpy as np
import pytest
import torch

from sac.providers import SurrogateSemanticEncoder
from sac.quantize import Codebook, quantize
from sac.semantic import (
    POOL_FACTOR,
    SemanticAdapter,
    build_semantic_codebook,
    load_codebook_npy,
    pool_to_semantic_rate,
    tokenize_semantic,
)
from tests.conftest import rand_wave


class TestPooling:
    def test_mean_oracle_2d(self):
        s = torch.arange(32, dtype=torch.float32).reshape(8, 4)
        pooled = pool_to_semantic_rate(s)
        ref = s.reshape(2, 4, 4).mean(dim=1)
        assert torch.equal(pooled, ref)

    def test_mean_oracle_3d(self):
        s = torch.randn(2, 12, 5)
        pooled = pool_to_semantic_rate(s)
        ref = s.reshape(2, 3, 4, 5).mean(dim=2)
        assert torch.allclose(pooled, ref)

    def test_constant_input_unchanged(self):
        s = torch.full((8, 3), 2.5)
        assert torch.equal(pool_to_semantic_rate(s), torch.full((2, 3), 2.5))

    def test_remainder_frames_dropped(self, caplog):
        s = torch.randn(10, 3)
        with caplog.at_level("WARNING"):
            pooled = pool_to_semantic_rate(s)
        assert pooled.shape == (2, 3)
        assert torch.allclose(pooled, s[:8].reshape(2, 4, 3).mean(dim=1))

    def test_too_short_errors(self):
        with pytest.raises(ValueError):
            pool_to_semantic_rate(torch.randn(3, 4))

    def test_pool_factor(self):
        assert POOL_FACTOR == 4


class TestTokenize:
    def test_matches_quantize_and_keeps_usage(self):
        cb = Codebook(16, 4, init_seed=3).freeze()
        s = torch.randn(10, 4)
        before = cb.usage.clone()
        tokens, s_q = tokenize_semantic(s, cb)
        assert torch.equal(cb.usage, before)
        ref_idx, _ = quantize(s, cb, update_usage=False)
        assert torch.equal(tokens, ref_idx)
        assert torch.equal(s_q, cb.entries.detach()[tokens])

    def test_no_gradient_into_codebook(self):
        cb = Codebook(16, 4, init_seed=3).freeze()
        _, s_q = tokenize_semantic(torch.randn(5, 4), cb)
        assert not s_q.requires_grad


class TestSemanticAdapter:
    def test_identity_upsample_at_init(self):
        """Residual blocks start as exact identities, so a fresh adapter is
        pure frame repetition."""
        torch.manual_seed(0)
        adapter = SemanticAdapter(d_sem=8, num_blocks=2)
        s_q = torch.randn(2, 6, 8)
        out = adapter(s_q, target_rate=50.0)
        assert torch.equal(out, s_q.repeat_interleave(4, dim=1))
        out2 = adapter(s_q, target_rate=25.0)
        assert torch.equal(out2, s_q.repeat_interleave(2, dim=1))

    def test_single_utterance_input(self):
        adapter = SemanticAdapter(d_sem=4, num_blocks=1)
        out = adapter(torch.randn(5, 4), target_rate=25.0)
        assert out.shape == (10, 4)

    def test_invalid_rate_factor(self):
        adapter = SemanticAdapter(d_sem=4, num_blocks=1)
        with pytest.raises(ValueError):
            adapter(torch.randn(1, 5, 4), target_rate=30.0)


class TestBuildCodebook:
    def test_clusters_cover_data(self):
        provider = SurrogateSemanticEncoder(d_sem=16, seed=1)
        waves = [rand_wave(i, seconds=1.0) for i in range(4)]
        cb = build_semantic_codebook(provider, waves, k=8, seed=0)
        assert cb.num_entries == 8
        assert cb.code_dim == 16
        assert not cb.entries.requires_grad

    def test_deterministic(self):
        provider = SurrogateSemanticEncoder(d_sem=16, seed=1)
        waves = [rand_wave(i, seconds=0.8) for i in range(3)]
        a = build_semantic_codebook(provider, waves, k=4, seed=0)
        b = build_semantic_codebook(provider, waves, k=4, seed=0)
        assert torch.equal(a.entries, b.entries)

    def test_too_few_rows(self):
        provider = SurrogateSemanticEncoder(d_sem=16, seed=1)
        # 0.32 s -> 16 feature frames -> 4 pooled rows, fewer than k.
        waves = [rand_wave(0, seconds=0.32)]
        with pytest.raises(ValueError):
            build_semantic_codebook(provider, waves, k=64, seed=0)

    def test_npy_round_trip(self, tmp_path):
        provider = SurrogateSemanticEncoder(d_sem=16, seed=1)
        waves = [rand_wave(i, seconds=0.8) for i in range(3)]
        cb = build_semantic_codebook(provider, waves, k=4, seed=0)
        path = tmp_path / "cb.npy"
        np.save(path, cb.entries.detach().numpy())
        back = load_codebook_npy(path)
        assert torch.equal(back.entries, cb.entries)
        assert not back.entries.requires_grad
