import json

import numpy as np
import pytest

from sac.audio import Waveform, write_wav
from sac.evaluation import (
    EvalReport,
    ProbeTask,
    aggregate_reports,
    emit_mel_figure,
    evaluate_directory,
    evaluate_pair,
    log_spectral_distance,
    mean_pairwise_similarity,
    merge_external_metrics,
    probe_linear,
    report_to_json,
    speaker_cosine,
    stoi,
    stream_probe_features,
)
from sac.synth import synthetic_utterance
from tests.conftest import rand_wave


@pytest.fixture(scope="module")
def utterance():
    return synthetic_utterance([55, 1], duration_s=3.0)


def with_noise(w: Waveform, snr_db: float, seed: int = 0) -> Waveform:
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(w)).astype(np.float32)
    power = float(np.mean(w.samples**2))
    noise *= np.sqrt(power / (10 ** (snr_db / 10)) / float(np.mean(noise**2)))
    return Waveform(np.clip(w.samples + noise, -1.0, 1.0), w.sample_rate)


class TestStoi:
    def test_identity_scores_one(self, utterance):
        assert stoi(utterance, utterance) >= 0.999

    def test_scale_invariance(self, utterance):
        half = Waveform(utterance.samples * 0.5, utterance.sample_rate)
        assert stoi(utterance, half) == pytest.approx(stoi(utterance, utterance), abs=1e-6)

    def test_noise_monotonicity(self, utterance):
        scores = [stoi(utterance, with_noise(utterance, snr)) for snr in (30, 20, 10, 0)]
        assert all(a >= b for a, b in zip(scores, scores[1:]))
        # Absolute values vary by utterance; the spread should not.
        assert scores[0] > 0.75
        assert scores[-1] < scores[0] - 0.2

    def test_length_mismatch(self, utterance):
        short = Waveform(utterance.samples[:-100], utterance.sample_rate)
        with pytest.raises(ValueError, match="length mismatch"):
            stoi(utterance, short)

    def test_too_short_signal(self):
        w = rand_wave(0, seconds=0.2)
        with pytest.raises(ValueError, match="too short"):
            stoi(w, w)


class TestLogSpectralDistance:
    def test_zero_for_identity(self, utterance):
        assert log_spectral_distance(utterance, utterance) == 0.0

    def test_positive_and_ordered(self, utterance):
        mild = log_spectral_distance(utterance, with_noise(utterance, 30))
        harsh = log_spectral_distance(utterance, with_noise(utterance, 0))
        assert 0 < mild < harsh

    def test_length_mismatch(self, utterance):
        with pytest.raises(ValueError, match="length mismatch"):
            log_spectral_distance(utterance, Waveform(utterance.samples[:-1], 16000))


class TestSpeakerCosine:
    def test_identical_is_one(self):
        v = np.arange(1.0, 9.0)
        assert speaker_cosine(v, v) == pytest.approx(1.0)

    def test_opposite_is_minus_one(self):
        v = np.arange(1.0, 9.0)
        assert speaker_cosine(v, -v) == pytest.approx(-1.0)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            speaker_cosine(np.zeros(4), np.ones(4))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            speaker_cosine(np.ones(4), np.ones(5))


class TestMeanPairwiseSimilarity:
    def test_identical_rows_give_one(self):
        e = np.tile(np.arange(1.0, 5.0), (3, 1))
        assert mean_pairwise_similarity(e) == pytest.approx(1.0)

    def test_orthogonal_rows_give_zero(self):
        assert mean_pairwise_similarity(np.eye(4)) == pytest.approx(0.0)

    def test_known_three_rows(self):
        e = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        # Pairs: (0,1)=0, (0,2)=1, (1,2)=0.
        assert mean_pairwise_similarity(e) == pytest.approx(1 / 3)

    def test_needs_two_rows(self):
        with pytest.raises(ValueError, match="at least two"):
            mean_pairwise_similarity(np.ones((1, 4)))


class TestEvalReport:
    def test_round_trips_fields(self):
        r = EvalReport(stoi=0.9, log_spectral_distance_dB=2.0, speaker_cosine=0.8)
        d = r.as_dict()
        assert d == {"stoi": 0.9, "log_spectral_distance_dB": 2.0, "speaker_cosine": 0.8}

    def test_stoi_clamped(self):
        r = EvalReport(stoi=-0.2, log_spectral_distance_dB=1.0, speaker_cosine=0.0)
        assert r.stoi == 0.0
        r = EvalReport(stoi=1.7, log_spectral_distance_dB=1.0, speaker_cosine=0.0)
        assert r.stoi == 1.0

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            EvalReport(stoi=float("nan"), log_spectral_distance_dB=1.0, speaker_cosine=0.0)

    def test_negative_lsd_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            EvalReport(stoi=0.5, log_spectral_distance_dB=-1.0, speaker_cosine=0.0)

    def test_cosine_range_enforced(self):
        with pytest.raises(ValueError, match="speaker_cosine"):
            EvalReport(stoi=0.5, log_spectral_distance_dB=1.0, speaker_cosine=-2.0)

    def test_optional_fields_dropped_when_unset(self):
        r = EvalReport(stoi=0.5, log_spectral_distance_dB=1.0, speaker_cosine=0.0, wer=0.1)
        d = r.as_dict()
        assert d["wer"] == 0.1
        assert "pesq" not in d


class TestEvaluatePair:
    def test_basic_report(self, utterance):
        report = evaluate_pair(utterance, with_noise(utterance, 20))
        assert 0.3 < report.stoi < 1.0
        assert report.log_spectral_distance_dB > 0
        assert -1.0 <= report.speaker_cosine <= 1.0
        assert report.ac_utilization is None


class TestEvaluateDirectory:
    @pytest.fixture
    def paired_dirs(self, tmp_path, utterance):
        ref, deg = tmp_path / "ref", tmp_path / "deg"
        ref.mkdir(), deg.mkdir()
        for i in range(2):
            w = synthetic_utterance([66, i], duration_s=2.0)
            write_wav(ref / f"utt{i}.wav", w)
            write_wav(deg / f"utt{i}.wav", with_noise(w, 25, seed=i))
        return ref, deg

    def test_pairs_by_stem(self, paired_dirs):
        ref, deg = paired_dirs
        reports = evaluate_directory(ref, deg)
        assert sorted(reports) == ["utt0", "utt1"]

    def test_unpaired_skipped(self, paired_dirs, utterance):
        ref, deg = paired_dirs
        write_wav(ref / "orphan.wav", utterance)
        reports = evaluate_directory(ref, deg)
        assert "orphan" not in reports

    def test_no_pairs_errors(self, tmp_path):
        (tmp_path / "a").mkdir(), (tmp_path / "b").mkdir()
        with pytest.raises(ValueError, match="no paired"):
            evaluate_directory(tmp_path / "a", tmp_path / "b")

    def test_threaded_matches_serial(self, paired_dirs):
        ref, deg = paired_dirs
        serial = evaluate_directory(ref, deg, num_workers=1)
        threaded = evaluate_directory(ref, deg, num_workers=2)
        for stem in serial:
            assert serial[stem].stoi == pytest.approx(threaded[stem].stoi)

    def test_aggregate_and_json(self, paired_dirs, tmp_path):
        ref, deg = paired_dirs
        reports = evaluate_directory(ref, deg)
        agg = aggregate_reports(reports)
        assert set(agg) == {"stoi", "log_spectral_distance_dB", "speaker_cosine"}
        out = tmp_path / "report.json"
        report_to_json(reports, out)
        payload = json.loads(out.read_text())
        assert payload["_aggregate"] == agg
        assert "utt0" in payload


class TestMergeExternal:
    def make_reports(self):
        return {"u0": EvalReport(stoi=0.9, log_spectral_distance_dB=1.0, speaker_cosine=0.5)}

    def test_merges_allowed_fields(self):
        reports = self.make_reports()
        merge_external_metrics(reports, {"u0": {"wer": 0.12, "pesq": 3.1}})
        assert reports["u0"].wer == 0.12
        assert reports["u0"].pesq == 3.1

    def test_unknown_id_rejected(self):
        with pytest.raises(KeyError, match="unknown utterance"):
            merge_external_metrics(self.make_reports(), {"nope": {"wer": 0.1}})

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown external metric"):
            merge_external_metrics(self.make_reports(), {"u0": {"snr": 20}})


class TestProbe:
    def make_task(self, n_per_class=6):
        items = []
        for label in (0, 1):
            for i in range(n_per_class):
                items.append((rand_wave(100 * label + i, seconds=0.4), label))
        return ProbeTask(items=items, num_classes=2)

    def test_task_validation(self):
        w = rand_wave(0, seconds=0.2)
        with pytest.raises(ValueError, match="at least 2 classes"):
            ProbeTask(items=[(w, 0), (w, 0)], num_classes=1)
        with pytest.raises(ValueError, match="at least 2 items"):
            ProbeTask(items=[(w, 0), (w, 0), (w, 1)], num_classes=2)

    def test_labels_property(self):
        task = self.make_task(2)
        assert task.labels.tolist() == [0, 0, 1, 1]

    def test_separable_features_score_high(self):
        task = self.make_task()
        labels = task.labels
        rng = np.random.default_rng(0)
        features = rng.standard_normal((len(labels), 8)) * 0.01
        features[:, 0] += labels * 10.0
        assert probe_linear(features, task) == 1.0

    def test_split_seed_deterministic(self):
        task = self.make_task()
        rng = np.random.default_rng(1)
        features = rng.standard_normal((len(task.labels), 8))
        a = probe_linear(features, task, split_seed=3)
        b = probe_linear(features, task, split_seed=3)
        assert a == b

    def test_feature_validation(self):
        task = self.make_task(2)
        with pytest.raises(ValueError, match="must be"):
            probe_linear(np.zeros((2, 4)), task)
        bad = np.full((4, 4), np.nan)
        with pytest.raises(ValueError, match="non-finite"):
            probe_linear(bad, task)

    def test_stream_probe_feature_width(self, tiny_model, tiny_config):
        waves = [rand_wave(i, seconds=0.4) for i in range(3)]
        feats = stream_probe_features(tiny_model, waves)
        assert feats.shape == (3, tiny_config.d_sem + tiny_config.d_model)
        assert np.isfinite(feats).all()


class TestMelFigure:
    def test_writes_png_and_returns_matrices(self, tmp_path, utterance):
        out = tmp_path / "fig" / "panels.png"
        mels = emit_mel_figure({"original": utterance, "copy": utterance}, out)
        assert out.exists() and out.stat().st_size > 0
        assert set(mels) == {"original", "copy"}
        assert np.array_equal(mels["original"], mels["copy"])
        assert mels["original"].shape[1] == 80

    def test_empty_panels_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="no waveforms"):
            emit_mel_figure({}, tmp_path / "x.png")
