import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doceval.metrics_doc import (
    ClassificationEvent,
    EvaluationConfig,
    ObjectOutcome,
    adl_compliance,
    ambiguity_adjusted_score,
    classification_events,
    correct_class_distances,
    detection_latency,
    latency_recall_curve,
    localization_error_stats,
    match_stream,
    oos_confusion,
    oos_detection_counts,
    tracking_continuity,
)
from doceval.metrics_legacy import ConfusionCounts
from doceval.report import dumps_report, evaluate, strip_generated_at
from doceval.scenario import OOS, AmbiguityInterval, PredictionEvent, frame_times, make_stream
from doceval.simulator import DetectorModel, generate_scene, simulate_detector

from conftest import obj, scene_config, static_scenario


def ev(t, label, pos, track="t0", conf=0.9):
    return PredictionEvent(t, label, tuple(pos), conf, track)


def outcome(latency, exposure=10.0, oid="x"):
    return ObjectOutcome(oid, 0.0, latency, latency, exposure, None, False)


# --------------------------------------------------------------------------- #
# classification with an OOS class


def test_oos_confusion_examples():
    pairs = [("cube", "cube"), ("rect", "cube"), (OOS, "cube"), (OOS, OOS), ("cube", OOS)]
    assert oos_confusion(pairs) == ConfusionCounts(tp=1, fp=2, fn=1, tn=1)


labels = st.sampled_from(["cube", "rect", OOS])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(labels, labels), max_size=40))
def test_oos_confusion_partitions_events(pairs):
    c = oos_confusion(pairs)
    assert c.total == len(pairs)
    assert c.tn == sum(1 for p, t in pairs if p == OOS and t == OOS)
    assert c.tp == sum(1 for p, t in pairs if p == t != OOS)


# --------------------------------------------------------------------------- #
# latency and ADL compliance


def _late_detection(first_pred_t):
    s = static_scenario(
        [obj("a", "cube", (0.0, 0.0, 2.0), visibility_intervals=((1.0, 5.0),))],
        duration=5.0,
        frame_interval=0.1,
    )
    events = [ev(float(t), "cube", (0.0, 0.0, 2.0)) for t in frame_times(5.0, 0.1) if t >= first_pred_t - 1e-9]
    return s, make_stream(events)


def test_latency_from_entry_to_first_correct_match():
    s, stream = _late_detection(1.8)
    (o,) = detection_latency(s, stream, EvaluationConfig())
    assert o.entry_time == pytest.approx(1.0)
    assert o.latency == pytest.approx(0.8)
    assert o.adl_compliant is True
    assert o.latency <= o.exposure


def test_latency_with_persistence_counts_completion_frame():
    s, stream = _late_detection(1.8)
    (o,) = detection_latency(s, stream, EvaluationConfig(persistence_frames=3))
    assert o.latency == pytest.approx(1.0)


def test_never_predicted_object_is_noncompliant():
    s, _ = _late_detection(0.0)
    (o,) = detection_latency(s, make_stream([]), EvaluationConfig())
    assert o.latency is None and o.adl_compliant is False and not o.excluded_short_exposure


def test_wrong_label_does_not_comprehend():
    s, stream = _late_detection(1.0)
    wrong = make_stream([PredictionEvent(e.t, "rect", e.position, e.confidence) for e in stream.events])
    (o,) = detection_latency(s, wrong, EvaluationConfig())
    assert o.latency is None


def test_compliance_examples():
    outs = [outcome(0.5), outcome(1.5), outcome(None, exposure=5.0), outcome(None, exposure=0.3)]
    assert adl_compliance(outs, 1.0) == pytest.approx(1 / 3)
    assert adl_compliance(outs, 2.0) == pytest.approx(2 / 3)
    assert adl_compliance([], 1.0) == 1.0
    # the short-exposure miss becomes eligible once adl drops below its exposure
    assert adl_compliance(outs, 0.2) == 0.0


lat = st.one_of(st.none(), st.floats(0, 5))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(lat, st.floats(0, 6)), max_size=20), st.floats(0.01, 4), st.floats(0, 2))
def test_compliance_monotone_in_adl_without_exclusions(items, adl, grow):
    # with every exposure long enough, eligibility is fixed and compliance can only grow
    outs = [outcome(la, exposure=100.0) for la, _ in items]
    assert adl_compliance(outs, adl + grow) >= adl_compliance(outs, adl)


def test_curve_perfect_and_empty():
    pts, auc = latency_recall_curve([outcome(0.0)] * 5, (0.0, 0.5, 1.0))
    assert auc == 1.0 and all(c == 1.0 for _, c in pts)
    _, auc = latency_recall_curve([], (0.0, 1.0))
    assert auc == 1.0


def test_curve_uniform_latencies_half_area():
    rng = np.random.default_rng(0)
    outs = [outcome(float(x)) for x in rng.uniform(0, 1, 1000)]
    grid = tuple(0.05 * k for k in range(21))
    _, auc = latency_recall_curve(outs, grid)
    assert abs(auc - 0.5) <= 0.05


# --------------------------------------------------------------------------- #
# ambiguity


def _amb_track():
    amb = (AmbiguityInterval((1.0, 2.0), frozenset({"cube", "rect"})),)
    return {"a": obj("a", "cube", (0, 0, 2), ambiguity_intervals=amb)}


def test_ambiguity_examples():
    tracks = _amb_track()
    events = [
        ClassificationEvent(1.5, "a", "rect", "cube"),  # in set: neutral
        ClassificationEvent(1.5, "a", OOS, "cube"),  # honest: neutral
        ClassificationEvent(1.5, "a", "plate", "cube"),  # outside set: fp
        ClassificationEvent(0.5, "a", "rect", "cube"),  # unambiguous: fp
        ClassificationEvent(2.5, "a", "cube", "cube"),  # unambiguous: tp
    ]
    res = ambiguity_adjusted_score(events, tracks)
    assert res.counts == ConfusionCounts(tp=1, fp=2, fn=0, tn=0)
    assert res.neutral_count == 2
    assert res.honesty_rate == pytest.approx(1 / 3)


def test_withheld_frames_count_as_honest():
    res = ambiguity_adjusted_score([ClassificationEvent(1.5, "a", "cube", "cube")], _amb_track(), withheld=3)
    assert res.honesty_rate == pytest.approx(3 / 4)
    assert ambiguity_adjusted_score([], _amb_track()).honesty_rate == 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 3), st.sampled_from(["cube", "rect", "plate", OOS])), max_size=30))
def test_deleting_neutral_events_leaves_counts_unchanged(items):
    tracks = _amb_track()
    events = [ClassificationEvent(t, "a", p, "cube") for t, p in items]
    full = ambiguity_adjusted_score(events, tracks)
    kept = [
        e for e in events
        if not (1.0 <= e.t <= 2.0 and e.predicted in ("cube", "rect", OOS))
    ]
    pruned = ambiguity_adjusted_score(kept, tracks)
    assert pruned.counts == full.counts
    assert full.neutral_count == len(events) - len(kept)


# --------------------------------------------------------------------------- #
# out-of-scope detection


def _distractor_scene(n=4):
    objs = [obj(f"d{k}", "tile", (0.5 * k - 0.75, 0.0, 3.0)) for k in range(n)]
    return static_scenario(objs, duration=1.0, frame_interval=0.5)


def _label_all(s, label_for):
    events = []
    for t in frame_times(s.duration, s.frame_interval):
        for o in s.objects:
            events.append(ev(float(t), label_for(o), o.position_at(float(t)), track=o.object_id))
    return make_stream(events)


def test_distractors_reported_oos_are_true_negatives():
    s = _distractor_scene()
    frames = match_stream(s, _label_all(s, lambda o: OOS), 0.25)
    assert oos_detection_counts(frames) == ConfusionCounts(tp=0, fp=0, fn=0, tn=4)


def test_one_mislabeled_distractor_is_false_positive():
    s = _distractor_scene()
    frames = match_stream(s, _label_all(s, lambda o: "cube" if o.object_id == "d2" else OOS), 0.25)
    assert oos_detection_counts(frames) == ConfusionCounts(tp=0, fp=1, fn=0, tn=3)


def test_distractor_outcomes_cover_visible_windows():
    for seed in range(4):
        s = generate_scene(scene_config(seed=seed, n_distractor=3))
        model = DetectorModel(distractor_policy="mislabel", mislabel_prob=0.3)
        frames = match_stream(s, simulate_detector(s, model, seed), 0.25)
        for window in (None, 1.0, 0.1):
            c = oos_detection_counts(frames, window)
            wid = np.floor(frames.times / window + 1e-9) if window else np.zeros(len(frames.times))
            expected = sum(
                len(set(wid[frames.visibility.visible[o.object_id]]))
                for o in s.objects if s.is_distractor(o)
            )
            assert c.fp + c.tn == expected


# --------------------------------------------------------------------------- #
# localization and tracking


def test_localization_stats_examples():
    assert localization_error_stats([]).n == 0
    st_ = localization_error_stats([3.0, 4.0])
    assert (st_.mean, st_.median, st_.max) == (3.5, 3.5, 4.0)
    assert st_.rms == pytest.approx(math.sqrt(12.5))


def test_localization_noise_rms():
    s = generate_scene(scene_config(n_distractor=0, duration=30.0))
    model = DetectorModel(localization_noise_sigma=0.05)
    frames = match_stream(s, simulate_detector(s, model, 3), 0.5)
    d = correct_class_distances(frames)
    assert len(d) > 1000
    assert localization_error_stats(d).rms == pytest.approx(0.05 * math.sqrt(3), rel=0.05)


def _tracked(ids):
    s = static_scenario([obj("a", "cube", (0, 0, 2))], duration=(len(ids) - 1) * 0.5, frame_interval=0.5)
    events = [ev(0.5 * k, "cube", (0, 0, 2), track=tid) for k, tid in enumerate(ids) if tid is not None]
    return match_stream(s, make_stream(events), 0.25)


def test_id_switches_counted_per_change():
    stats = tracking_continuity(_tracked(["a", "a", "b", "b", "a"]), EvaluationConfig())
    assert stats.id_switches == 2 and stats.fragmentation == 0


def test_fragmentation_counts_dropouts_inside_visibility():
    stats = tracking_continuity(_tracked(["a", None, "a", None, None, "a"]), EvaluationConfig())
    assert stats.fragmentation == 2 and stats.id_switches == 0


def test_occlusion_recovery_with_reacquire_delay():
    s = generate_scene(scene_config(occlusion_gaps=((3.0, 4.0), (6.0, 6.5)), n_distractor=0))
    model = DetectorModel(reacquire_latency=(0.2, 0.2), confidence_range=(1.0, 1.0))
    frames = match_stream(s, simulate_detector(s, model, 1), 0.25)
    stats = tracking_continuity(frames, EvaluationConfig(adl=1.0))
    assert stats.reentries > 0
    assert stats.occlusion_recovery_rate == 1.0


def test_recovery_fails_when_reacquire_exceeds_adl():
    s = generate_scene(scene_config(occlusion_gaps=((3.0, 4.0),), n_distractor=0, duration=8.0))
    model = DetectorModel(reacquire_latency=(1.5, 1.5))
    frames = match_stream(s, simulate_detector(s, model, 1), 0.25)
    stats = tracking_continuity(frames, EvaluationConfig(adl=1.0))
    assert stats.reentries > stats.reentries_excluded
    assert stats.occlusion_recovery_rate == 0.0


# --------------------------------------------------------------------------- #
# whole-pipeline properties


def test_matches_grow_with_tau():
    s = generate_scene(scene_config())
    stream = simulate_detector(s, DetectorModel(localization_noise_sigma=0.2), 4)
    counts = [sum(len(fr.pairs) for fr in match_stream(s, stream, tau).results) for tau in (0.1, 0.25, 0.5, 1.0)]
    assert counts == sorted(counts)


def test_classification_events_only_for_matches():
    s = _distractor_scene(2)
    frames = match_stream(s, _label_all(s, lambda o: OOS), 0.25)
    evs = classification_events(frames)
    assert len(evs) == 2 * 3 and all(e.truth == OOS for e in evs)


def test_evaluation_deterministic():
    s = generate_scene(scene_config())
    stream = simulate_detector(s, DetectorModel(per_frame_detect_prob=0.7, localization_noise_sigma=0.05), 9)
    a = strip_generated_at(dumps_report(evaluate(s, stream, EvaluationConfig())))
    b = strip_generated_at(dumps_report(evaluate(s, stream, EvaluationConfig())))
    assert a == b


@pytest.mark.parametrize(
    "kw", [dict(adl=0), dict(tau_loc=-1), dict(persistence_frames=0), dict(adl_grid=(1.0, 0.5)),
           dict(iou_threshold=0.0), dict(distractor_window=0.0)]
)
def test_config_rejects_bad_values(kw):
    with pytest.raises(ValueError):
        EvaluationConfig(**kw)
