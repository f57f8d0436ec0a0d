"""Precision scoring, quadrant mapping, and the pre/post assessment."""

import numpy as np
import pytest

from bioaffect import bmmn
from bioaffect.bmmn import AffectEstimate
from bioaffect.errors import ConfigError, GraphError, ValidationError
from bioaffect.evaluate import (
    PatientAssessment,
    Quadrant,
    binarize_affect,
    precision,
    quadrant_rows,
    report_rows,
    summarize_therapy,
    therapy_assess,
    to_quadrant,
    trial_predictions,
)
from bioaffect.signals import AffectLabel, FrameRecord

from oracles import confusion_precision_direct


def est(valence=5.0, arousal=5.0, liking=5.0, emotion=0):
    values = np.zeros(10)
    values[0] = (valence - 1.0) / 8.0
    values[1] = (arousal - 1.0) / 8.0
    values[2] = (liking - 1.0) / 8.0
    values[3 + emotion] = 1.0
    return AffectEstimate(values)


def label(valence=5.0, arousal=5.0, liking=5.0, emotion=0):
    return AffectLabel(valence, arousal, liking, emotions=np.eye(7)[emotion])


class TestBinarize:
    def test_endpoints_and_tie(self):
        assert binarize_affect(9.0) == "high"
        assert binarize_affect(1.0) == "low"
        assert binarize_affect(5.0) == "low"


class TestPrecision:
    def test_all_correct_gives_100(self):
        preds = [est(7, 3, 8, 2), est(2, 6, 4, 5)]
        labels = [label(8, 2, 9, 2), label(1, 7, 3, 5)]
        report = precision(preds, labels)
        for value in report.defined().values():
            assert value == 100.0
        assert report.macro_average == 100.0

    def test_hand_counted_half(self):
        preds = [est(valence=7), est(valence=7)]
        labels = [label(valence=7), label(valence=3)]
        report = precision(preds, labels)
        assert report["valence"] == 50.0

    def test_undefined_when_never_predicted(self):
        preds = [est(valence=2), est(valence=3)]
        labels = [label(valence=7), label(valence=2)]
        report = precision(preds, labels)
        assert report["valence"] is None

    def test_undefined_excluded_from_macro(self):
        preds = [est(7, 2, 2, 0)]
        labels = [label(7, 7, 7, 0)]
        report = precision(preds, labels)
        defined = report.defined()
        assert "arousal" not in defined and "liking" not in defined
        assert report.macro_average == pytest.approx(
            float(np.mean(list(defined.values())))
        )

    def test_matches_confusion_matrix_oracle(self):
        rng = np.random.default_rng(0)
        preds, labels = [], []
        for _ in range(100):
            preds.append(
                est(rng.uniform(1, 9), rng.uniform(1, 9), rng.uniform(1, 9),
                    int(rng.integers(7)))
            )
            labels.append(
                label(rng.uniform(1, 9), rng.uniform(1, 9), rng.uniform(1, 9),
                      int(rng.integers(7)))
            )
        report = precision(preds, labels)
        for i, name in enumerate(("valence", "arousal", "liking")):
            pred_flags = [getattr(p, name) > 5 for p in preds]
            true_flags = [getattr(l, name) > 5 for l in labels]
            assert report[name] == confusion_precision_direct(pred_flags, true_flags)
        for c, name in enumerate(
            ("neutral", "disgust", "joy", "surprise", "anger", "fear", "sadness")
        ):
            pred_flags = [p.emotion_class() == c for p in preds]
            true_flags = [l.emotion_class() == c for l in labels]
            assert report[name] == confusion_precision_direct(pred_flags, true_flags)

    def test_length_mismatch(self):
        with pytest.raises(GraphError):
            precision([est()], [])

    def test_report_rows_cover_all_labels(self):
        rows = report_rows(precision([est(7, 7, 7, 1)], [label(7, 7, 7, 1)]))
        assert len(rows) == 12  # header + 10 labels + macro


class _StubModel:
    """Predicts straight from the sample label, optionally with an offset."""

    def __init__(self, offset=0.0):
        self.offset = offset

    def predict(self, sample):
        from bioaffect.signals import label_targets

        values = label_targets(sample.label).copy()
        values[:3] += self.offset / 8.0
        return AffectEstimate(values)


class _FrameSample:
    def __init__(self, t, label, subject="patient00", session="s"):
        self.face = FrameRecord(timestamp_s=t, image=np.zeros((4, 4)))
        self.label = label
        self.subject_id = subject
        self.session_id = session
        self.segments = {}


class TestTrialPredictions:
    def test_frame_mean_per_trial(self):
        samples = [
            _FrameSample(0.0, label(valence=3), session="t0"),
            _FrameSample(1.0, label(valence=3), session="t0"),
            _FrameSample(0.0, label(valence=7), session="t1"),
        ]
        model = _StubModel()
        preds, labels = trial_predictions(model, samples)
        assert len(preds) == 2
        assert [l.valence for l in labels] == [3.0, 7.0]
        preds_frames, _ = trial_predictions(model, samples, per_frame=True)
        assert len(preds_frames) == 3


class TestQuadrant:
    def test_midpoint(self):
        point = to_quadrant(5.0, 5.0)
        assert (point.valence_scaled, point.arousal_scaled) == (0.0, 0.0)
        assert point.quadrant == Quadrant.LVLA  # ties resolve to the low side

    def test_corners_exact(self):
        point = to_quadrant(9.0, 1.0)
        assert point.valence_scaled == 1.0 and point.arousal_scaled == -1.0
        assert point.quadrant == Quadrant.HVLA
        point = to_quadrant(1.0, 9.0)
        assert point.valence_scaled == -1.0 and point.arousal_scaled == 1.0
        assert point.quadrant == Quadrant.LVHA

    def test_linear_map_case(self):
        point = to_quadrant(2.0, 8.0)
        assert point.valence_scaled == -0.75 and point.arousal_scaled == 0.75
        assert point.quadrant == Quadrant.LVHA

    def test_monotone_in_each_argument(self):
        grid = np.linspace(1, 9, 17)
        scaled = [to_quadrant(v, 5.0).valence_scaled for v in grid]
        assert all(b > a for a, b in zip(scaled, scaled[1:]))
        scaled = [to_quadrant(5.0, a).arousal_scaled for a in grid]
        assert all(b > a for a, b in zip(scaled, scaled[1:]))

    def test_range_enforced(self):
        with pytest.raises(ValidationError):
            to_quadrant(0.5, 5.0)


def drift_session(n=40, minutes=40.0, start=(2.5, 7.5), end=(7.5, 2.5)):
    seconds = minutes * 60.0
    samples = []
    for i in range(n):
        t = i * seconds / (n - 1)
        f = t / seconds
        v = start[0] + (end[0] - start[0]) * f
        a = start[1] + (end[1] - start[1]) * f
        samples.append(_FrameSample(t, label(valence=v, arousal=a)))
    return samples


class TestTherapyAssess:
    def test_planted_drift_moves_q2_to_q4(self):
        samples = drift_session()
        assessment = therapy_assess(samples, _StubModel(), window_minutes=15.0)
        assert assessment.pre.quadrant == Quadrant.LVHA
        assert assessment.post.quadrant == Quadrant.HVLA
        assert assessment.q2_to_q4
        assert assessment.magnitude > 0.3
        report = summarize_therapy([assessment])
        assert report.q2_to_q4_count == 1

    def test_constant_session_pre_equals_post(self):
        samples = [
            _FrameSample(t, label(valence=6.0, arousal=4.0))
            for t in np.linspace(0, 40 * 60, 30)
        ]
        assessment = therapy_assess(samples, _StubModel(), window_minutes=15.0)
        assert abs(assessment.pre.valence_scaled - assessment.post.valence_scaled) < 0.05
        assert abs(assessment.pre.arousal_scaled - assessment.post.arousal_scaled) < 0.05

    def test_windows_disjoint_for_long_sessions(self):
        samples = drift_session(n=61, minutes=30.0)
        window_s = 15.0 * 60
        t0 = samples[0].face.timestamp_s
        t1 = samples[-1].face.timestamp_s
        pre_times = [
            s.face.timestamp_s for s in samples if s.face.timestamp_s < t0 + window_s
        ]
        post_times = [
            s.face.timestamp_s for s in samples if s.face.timestamp_s > t1 - window_s
        ]
        assert not (set(pre_times) & set(post_times))
        therapy_assess(samples, _StubModel(), window_minutes=15.0)

    def test_short_session_clips_to_halves_with_warning(self):
        samples = drift_session(n=20, minutes=10.0)
        with pytest.warns(UserWarning, match="halves"):
            assessment = therapy_assess(samples, _StubModel(), window_minutes=15.0)
        assert assessment.clipped_windows

    def test_each_frame_used_once_per_window(self):
        samples = drift_session(n=30, minutes=40.0)
        calls = []

        class CountingModel(_StubModel):
            def predict(self, sample):
                calls.append(sample.face.timestamp_s)
                return super().predict(sample)

        therapy_assess(samples, CountingModel(), window_minutes=15.0)
        assert len(calls) == len(set(calls))

    def test_empty_session_rejected(self):
        with pytest.raises(GraphError):
            therapy_assess([], _StubModel())

    def test_quadrant_rows_format(self):
        samples = drift_session()
        report = summarize_therapy([therapy_assess(samples, _StubModel())])
        rows = quadrant_rows(report)
        assert rows[0] == ("patient", "phase", "valence_scaled", "arousal_scaled", "quadrant")
        assert len(rows) == 3
        assert rows[1][1] == "pre" and rows[2][1] == "post"


class TestAblationConfigs:
    def test_arm_configs_differ_only_in_streams(self):
        from dataclasses import asdict
        from bioaffect.evaluate import ARM_STREAMS

        base = bmmn.TrainConfig(variant="bmmn", epochs=1, seed=3)
        from dataclasses import replace

        arms = {arm: replace(base, **masks) for arm, masks in ARM_STREAMS.items()}
        reference = asdict(base)
        for arm_config in arms.values():
            diff = {
                k: v for k, v in asdict(arm_config).items() if reference[k] != v
            }
            assert set(diff) <= {"use_bio", "use_spatial"}

    def test_ablation_requires_base_variant(self):
        from bioaffect.evaluate import ablation_run

        with pytest.raises(ConfigError):
            ablation_run([], bmmn.TrainConfig(variant="bae2"))

    def test_multimodal_arm_warm_starts_from_single_arms(self):
        from bioaffect.evaluate import ablation_run
        from test_bmmn import make_samples, toy_config, toy_spec

        samples = make_samples(n_subjects=2, trials=2, frames=2, seed=4)
        config = toy_config(epochs=1, seed=9)
        result = ablation_run(samples, config, spec=toy_spec(config))
        fresh = bmmn.train(samples, config, spec=toy_spec(config))
        # Same config and seed; only the warm start from the single-modality
        # arms can make the parameters differ.
        name = "bio.ECG.conv1.w"
        staged = result.models["multimodal"].store[name].data
        assert not np.array_equal(staged, fresh.model.store[name].data)
        reports = result.reports
        assert set(reports) == {"bio_only", "face_only", "multimodal"}
        assert all(r.n == reports["multimodal"].n for r in reports.values())
