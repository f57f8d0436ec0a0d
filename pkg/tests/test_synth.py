"""Planted-signal generators: decodability and format compliance."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from bioaffect.errors import ConfigError
from bioaffect.session_io import load_session, list_sessions
from bioaffect.signals import MODEL_HZ, AffectLabel, Channel, rescale, resample, synchronize
from bioaffect.synth import (
    SynthSpec,
    TherapySpec,
    burst_times,
    gen_dataset,
    gen_ecg,
    gen_ecg_segments,
    gen_eda,
    gen_face,
    gen_therapy_session,
    heart_rate_bpm,
)

from oracles import count_peaks, least_squares_r2


def label(valence=5.0, arousal=5.0, liking=5.0, emotion=0):
    return AffectLabel(valence, arousal, liking, emotions=np.eye(7)[emotion])


class TestEcg:
    def test_high_arousal_pulse_count(self):
        # arousal 9 -> 100 bpm -> about 13 pulses in a 7.8 s window
        trace = gen_ecg(label(arousal=9.0), 7.8125, 128.0, seed=1, noise_sigma=0.0)
        n = count_peaks(trace.samples, threshold=0.5)
        assert abs(n - 13) <= 1

    def test_mid_arousal_near_eight_beats(self):
        trace = gen_ecg(label(arousal=5.0), 7.8125, 128.0, seed=2, noise_sigma=0.0)
        n = count_peaks(trace.samples, threshold=0.5)
        assert abs(n - 10) <= 1

    def test_rate_linear_in_arousal(self):
        assert heart_rate_bpm(9.0) == 100.0
        assert heart_rate_bpm(1.0) == 60.0

    def test_deterministic(self):
        a = gen_ecg(label(), 5.0, 128.0, seed=3, noise_sigma=0.0)
        b = gen_ecg(label(), 5.0, 128.0, seed=3, noise_sigma=0.0)
        assert (a.samples == b.samples).all()

    def test_unsupported_rate(self):
        with pytest.raises(ConfigError):
            gen_ecg(label(), 5.0, 250.0, seed=0)


class TestEda:
    def test_valence_raises_mean_level(self):
        lo = gen_eda(label(valence=1.0), 20.0, 128.0, seed=4, noise_sigma=0.0)
        hi = gen_eda(label(valence=9.0), 20.0, 128.0, seed=4, noise_sigma=0.0)
        assert hi.samples.mean() > lo.samples.mean()

    def test_zero_rate_is_pure_tonic_ramp(self):
        trace = gen_eda(
            label(liking=7.0), 20.0, 128.0, seed=5, noise_sigma=0.0, burst_rate_scale=0.0
        )
        diffs = np.diff(trace.samples)
        assert np.allclose(diffs, diffs[0])

    def test_burst_count_statistics(self):
        rate, seconds = 0.6, 100.0
        counts = [
            burst_times(np.random.default_rng([6, i]), rate, seconds).size
            for i in range(200)
        ]
        mean = np.mean(counts)
        sigma = np.sqrt(rate * seconds / len(counts))
        assert abs(mean - rate * seconds) < 3 * sigma


class TestFace:
    def test_high_valence_top_decile_intensity(self):
        img = gen_face(label(valence=9.0), seed=7)
        assert img.mean() >= 0.9

    def test_deterministic(self):
        a = gen_face(label(valence=3.0, emotion=4), seed=8)
        b = gen_face(label(valence=3.0, emotion=4), seed=8)
        assert (a == b).all()

    def test_two_classes_linearly_separable(self):
        # Least-squares probe on raw pixels must split two orientations.
        images, targets = [], []
        for i in range(1000):
            cls = i % 2
            img = gen_face(label(emotion=3 if cls else 0), seed=100 + i)
            images.append(img.reshape(-1))
            targets.append(1.0 if cls else -1.0)
        X = np.column_stack([np.ones(1000), np.stack(images)])
        y = np.asarray(targets)
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        acc = np.mean(np.sign(X @ coef) == y)
        assert acc > 0.90


class TestDataset:
    def test_sessions_loadable_end_to_end(self, tmp_path):
        spec = SynthSpec(n_subjects=2, trials_per_subject=2, trial_seconds=12.0,
                         rng_seed=1, fps=0.5)
        dirs = gen_dataset(spec, tmp_path / "corpus")
        assert len(dirs) == 4
        for session_dir in dirs:
            data = load_session(session_dir)
            traces = {c: rescale(resample(t, MODEL_HZ)) for c, t in data.traces.items()}
            samples = synchronize(
                traces, data.frames, data.label, data.subject_id, data.session_id
            )
            assert len(samples) == len(data.frames) == 6

    def test_label_histogram_mode_at_center(self, tmp_path):
        spec = SynthSpec(n_subjects=10, trials_per_subject=10, trial_seconds=1.0,
                         rng_seed=2, fps=1.0)
        gen_dataset(spec, tmp_path / "corpus")
        values = []
        for line in (tmp_path / "corpus" / "labels.jsonl").read_text().splitlines():
            obj = json.loads(line)
            values.extend([obj["valence"], obj["arousal"], obj["liking"]])
        hist, edges = np.histogram(values, bins=8, range=(1.0, 9.0))
        mode_bin = int(np.argmax(hist))
        assert edges[mode_bin] <= 5.0 <= edges[mode_bin + 1]

    def test_fixed_seed_byte_identical_corpus(self, tmp_path):
        spec = SynthSpec(n_subjects=1, trials_per_subject=2, trial_seconds=6.0,
                         rng_seed=3, fps=0.5)

        def digest(root):
            gen_dataset(spec, root)
            h = hashlib.sha256()
            for path in sorted(Path(root).rglob("*")):
                if path.is_file():
                    h.update(path.name.encode())
                    h.update(path.read_bytes())
            return h.hexdigest()

        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_planted_arousal_decodable_from_ecg_features(self):
        # 20 hand-crafted features, ordinary least squares, R^2 > 0.8.
        rng = np.random.default_rng(9)
        feats, targets = [], []
        for i in range(120):
            arousal = float(np.clip(rng.normal(5, 1.5), 1, 9))
            trace = gen_ecg(label(arousal=arousal), 10.0, 128.0, seed=2000 + i,
                            noise_sigma=0.05)
            x = trace.samples
            d = np.diff(x)
            centered = x - x.mean()
            row = [
                count_peaks(x, 0.5),
                x.mean(), x.var(), x.std(), np.sqrt(np.mean(x * x)),
                x.min(), x.max(), np.ptp(x),
                np.abs(d).mean(), d.var(),
                np.mean(centered**3), np.mean(centered**4),
                np.quantile(x, 0.1), np.quantile(x, 0.25), np.quantile(x, 0.5),
                np.quantile(x, 0.75), np.quantile(x, 0.9),
                np.mean(np.abs(centered)),
                float(np.sum(centered[:-1] * centered[1:])),
                float(np.sum(np.abs(d) > 0.1)),
            ]
            feats.append(row)
            targets.append(arousal)
        r2 = least_squares_r2(np.asarray(feats), np.asarray(targets))
        assert r2 > 0.8

    def test_generator_output_passes_validation(self, tmp_path):
        spec = SynthSpec(n_subjects=1, trials_per_subject=1, trial_seconds=10.0,
                         rng_seed=4, fps=0.4)
        gen_dataset(spec, tmp_path / "c")
        assert len(list_sessions(tmp_path / "c")) == 1
        load_session(list_sessions(tmp_path / "c")[0])


class TestTherapySession:
    def test_drifting_session_loads(self, tmp_path):
        spec = TherapySpec(minutes=4.0, fps=0.25, rng_seed=5)
        session_dir = gen_therapy_session(spec, tmp_path / "therapy")
        data = load_session(session_dir)
        assert len(data.frames) == 60
        # ECG pulse rate must fall from start to end as planted arousal drops.
        x = data.traces[Channel.ECG].samples
        third = x.size // 3
        start_peaks = count_peaks(x[:third], 0.5)
        end_peaks = count_peaks(x[-third:], 0.5)
        assert start_peaks > end_peaks

    def test_face_intensity_rises_with_valence_drift(self, tmp_path):
        spec = TherapySpec(minutes=4.0, fps=0.25, rng_seed=6)
        session_dir = gen_therapy_session(spec, tmp_path / "therapy")
        data = load_session(session_dir)
        first = data.frames[0].image.mean()
        last = data.frames[-1].image.mean()
        assert last > first


class TestSegmentsHelper:
    def test_counts_and_range(self):
        windows = gen_ecg_segments(12, seed=11)
        assert len(windows) == 12
        for w in windows:
            assert w.shape == (1000,)
            assert w.min() >= 0.0 and w.max() <= 1.0

    def test_deterministic(self):
        a = gen_ecg_segments(4, seed=12)
        b = gen_ecg_segments(4, seed=12)
        assert all((x == y).all() for x, y in zip(a, b))
