import pytest
import torch

from sac.discriminators import (
    DEFAULT_FFT_SIZES,
    DEFAULT_PERIODS,
    DiscriminatorSet,
    MultiPeriodDiscriminator,
    MultiScaleSTFTDiscriminator,
    PeriodDiscriminator,
    STFTDiscriminator,
    pad_to_period,
)


class TestPadToPeriod:
    def test_no_pad_when_multiple(self):
        x = torch.randn(1, 1, 10)
        assert pad_to_period(x, 5) is x

    def test_pads_right_with_zeros(self):
        x = torch.ones(1, 1, 7)
        y = pad_to_period(x, 3)
        assert y.shape[-1] == 9
        assert torch.equal(y[..., 7:], torch.zeros(1, 1, 2))
        assert torch.equal(y[..., :7], x)


class TestPeriodDiscriminator:
    def test_score_and_feature_count(self):
        torch.manual_seed(0)
        d = PeriodDiscriminator(period=3, width_scale=0.125)
        score, feats = d(torch.randn(2, 1, 600))
        assert score.dim() == 4 and score.shape[:2] == (2, 1)
        # Five conv activations plus the score map.
        assert len(feats) == 6
        assert feats[-1] is score

    def test_fold_width_equals_period(self):
        d = PeriodDiscriminator(period=7, width_scale=0.125)
        score, feats = d(torch.randn(1, 1, 700))
        assert feats[0].shape[-1] == 7

    def test_indivisible_length_handled(self):
        d = PeriodDiscriminator(period=11, width_scale=0.125)
        score, _ = d(torch.randn(1, 1, 1000))
        assert torch.isfinite(score).all()


class TestMultiPeriodDiscriminator:
    def test_one_sub_per_period(self):
        mpd = MultiPeriodDiscriminator(width_scale=0.125)
        assert len(mpd.subs) == len(DEFAULT_PERIODS) == 5
        out = mpd(torch.randn(1, 1200))
        assert len(out.scores) == 5
        assert len(out.features) == 5

    def test_accepts_2d_and_3d_input(self):
        torch.manual_seed(1)
        mpd = MultiPeriodDiscriminator(periods=(2, 3), width_scale=0.125).eval()
        x = torch.randn(1, 660)
        with torch.no_grad():
            a = mpd(x)
            b = mpd(x.unsqueeze(1))
        assert torch.equal(a.scores[0], b.scores[0])

    def test_duplicate_periods_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            MultiPeriodDiscriminator(periods=(2, 2, 3))

    def test_empty_batch_rejected(self):
        mpd = MultiPeriodDiscriminator(periods=(2,), width_scale=0.125)
        with pytest.raises(ValueError, match="empty batch"):
            mpd(torch.randn(0, 100))


class TestSTFTDiscriminator:
    def test_score_and_features(self):
        torch.manual_seed(2)
        d = STFTDiscriminator(fft_size=512, hop=128, width_scale=0.125)
        score, feats = d(torch.randn(2, 2048))
        assert score.shape[:2] == (2, 1)
        assert len(feats) == 6
        assert feats[-1] is score

    def test_first_feature_sees_real_imag_pair(self):
        d = STFTDiscriminator(fft_size=256, hop=64, width_scale=0.125)
        _, feats = d(torch.randn(1, 1024))
        # Input to the stack is [batch, 2, bins, frames]; bins survive conv 1.
        assert feats[0].shape[2] == 256 // 2 + 1

    def test_too_short_signal_errors(self):
        d = STFTDiscriminator(fft_size=512, hop=128, width_scale=0.125)
        with pytest.raises(ValueError, match="shorter than"):
            d(torch.randn(1, 100))


class TestMultiScaleSTFTDiscriminator:
    def test_one_sub_per_scale(self):
        ms = MultiScaleSTFTDiscriminator(width_scale=0.125)
        assert len(ms.subs) == len(DEFAULT_FFT_SIZES) == 3
        assert [s.fft_size for s in ms.subs] == [512, 1024, 2048]
        assert [s.hop for s in ms.subs] == [128, 256, 512]

    def test_forward_counts(self):
        ms = MultiScaleSTFTDiscriminator(fft_sizes=(256, 512), width_scale=0.125)
        out = ms(torch.randn(1, 2048))
        assert len(out.scores) == 2

    def test_empty_scales_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            MultiScaleSTFTDiscriminator(fft_sizes=())


class TestDiscriminatorSet:
    def test_concatenates_both_families(self):
        torch.manual_seed(3)
        ds = DiscriminatorSet(width_scale=0.125)
        out = ds(torch.randn(1, 4096))
        assert len(out.scores) == 5 + 3
        assert len(out.features) == 8
        for f in out.features:
            assert len(f) == 6

    def test_width_scale_shrinks_parameters(self):
        small = sum(p.numel() for p in DiscriminatorSet(width_scale=0.125).parameters())
        large = sum(p.numel() for p in DiscriminatorSet(width_scale=0.25).parameters())
        assert small < large

    def test_weight_norm_parametrization_present(self):
        ds = DiscriminatorSet(periods=(2,), fft_sizes=(256,), width_scale=0.125)
        names = [n for n, _ in ds.named_parameters()]
        assert any("parametrizations.weight.original0" in n for n in names)

    def test_gradients_reach_input(self):
        torch.manual_seed(4)
        ds = DiscriminatorSet(periods=(2, 3), fft_sizes=(256,), width_scale=0.125)
        x = torch.randn(1, 1024, requires_grad=True)
        out = ds(x)
        torch.stack([s.mean() for s in out.scores]).sum().backward()
        assert x.grad is not None and torch.isfinite(x.grad).all()
