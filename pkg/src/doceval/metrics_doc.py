"""Latency-, out-of-scope-, ambiguity- and 3D-aware comprehension metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import VisibilityTimeline, compute_visibility, mask_runs
from .matching import FrameMatchResult, match_frame
from .metrics_legacy import ConfusionCounts
from .scenario import OOS, ObjectTrack, PredictionStream, Scenario, frame_index

DEFAULT_ADL_GRID = tuple(0.25 * k for k in range(13))


@dataclass(frozen=True)
class EvaluationConfig:
    adl: float = 1.0
    tau_loc: float = 0.25
    persistence_frames: int = 1
    adl_grid: tuple[float, ...] = DEFAULT_ADL_GRID
    iou_threshold: float = 0.5
    distractor_window: float | None = None  # None: whole scenario
    zero_division: float = 1.0

    def __post_init__(self):
        if not self.adl > 0:
            raise ValueError("adl must be positive")
        if not self.tau_loc > 0:
            raise ValueError("tau_loc must be positive")
        if int(self.persistence_frames) != self.persistence_frames or self.persistence_frames < 1:
            raise ValueError("persistence_frames must be an integer >= 1")
        if list(self.adl_grid) != sorted(self.adl_grid) or not self.adl_grid:
            raise ValueError("adl_grid must be a non-empty ascending list")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.distractor_window is not None and not self.distractor_window > 0:
            raise ValueError("distractor_window must be positive")

    def as_dict(self) -> dict:
        return {
            "adl": self.adl,
            "tau_loc": self.tau_loc,
            "persistence_frames": self.persistence_frames,
            "adl_grid": list(self.adl_grid),
            "iou_threshold": self.iou_threshold,
            "distractor_window": self.distractor_window,
            "zero_division": self.zero_division,
        }


@dataclass(frozen=True)
class ObjectOutcome:
    object_id: str
    entry_time: float | None
    comprehension_time: float | None
    latency: float | None
    exposure: float
    adl_compliant: bool | None
    excluded_short_exposure: bool

    def as_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "entry_time": self.entry_time,
            "comprehension_time": self.comprehension_time,
            "latency": self.latency,
            "exposure": self.exposure,
            "adl_compliant": self.adl_compliant,
            "excluded_short_exposure": self.excluded_short_exposure,
        }


@dataclass(frozen=True)
class ClassificationEvent:
    t: float
    object_id: str
    predicted: str
    truth: str  # OOS for distractor objects


@dataclass(frozen=True)
class AmbiguityResult:
    counts: ConfusionCounts
    neutral_count: int
    honesty_rate: float


@dataclass(frozen=True)
class LocalizationStats:
    n: int
    mean: float | None = None
    median: float | None = None
    rms: float | None = None
    max: float | None = None

    def as_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "median": self.median, "rms": self.rms, "max": self.max}


@dataclass(frozen=True)
class TrackingStats:
    id_switches: int = 0
    fragmentation: int = 0
    occlusion_recovery_rate: float = 1.0
    reentries: int = 0
    reentries_excluded: int = 0

    def as_dict(self) -> dict:
        return {
            "id_switches": self.id_switches,
            "fragmentation": self.fragmentation,
            "occlusion_recovery_rate": self.occlusion_recovery_rate,
            "reentries": self.reentries,
            "reentries_excluded": self.reentries_excluded,
        }


@dataclass
class FrameSet:
    """DOC-regime match results for every frame of a scenario."""

    scenario: Scenario
    stream: PredictionStream
    visibility: VisibilityTimeline
    results: list[FrameMatchResult]
    dropped: int = 0
    # frame index -> stream indices of the predictions assigned to that frame
    members: list[list[int]] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return self.visibility.frame_times

    def matched(self) -> list[dict[str, int]]:
        """Per frame: object_id -> matched stream index."""
        return [{oid: i for i, oid, _ in fr.pairs} for fr in self.results]


def bucket_predictions(stream: PredictionStream, n_frames: int, frame_interval: float):
    """Group stream indices by nearest frame; returns (buckets, dropped count)."""
    buckets: list[list[int]] = [[] for _ in range(n_frames)]
    dropped = 0
    for i, ev in enumerate(stream.events):
        k = frame_index(ev.t, frame_interval)
        if 0 <= k < n_frames:
            buckets[k].append(i)
        else:
            dropped += 1
    return buckets, dropped


def match_stream(
    scenario: Scenario,
    stream: PredictionStream,
    tau_loc: float,
    visibility: VisibilityTimeline | None = None,
) -> FrameSet:
    """Run class-agnostic 3D matching on every frame against visible objects."""
    vis = visibility if visibility is not None else compute_visibility(scenario)
    times = vis.frame_times
    buckets, dropped = bucket_predictions(stream, len(times), scenario.frame_interval)
    results = []
    for k, t in enumerate(times):
        t = float(t)
        visible = [
            (o.object_id, o.position_at(t)) for o in scenario.objects if vis.visible[o.object_id][k]
        ]
        idx = buckets[k]
        positions = [stream.events[i].position for i in idx]
        results.append(match_frame(positions, visible, tau_loc, t=t, pred_indices=idx))
    return FrameSet(scenario, stream, vis, results, dropped, buckets)


# --------------------------------------------------------------------------- #
# classification


def oos_confusion(events: Iterable[tuple[str, str]]) -> ConfusionCounts:
    """Confusion counts over (predicted, truth) label pairs where either may be OOS.

    A known-class prediction is TP when it equals the truth and FP otherwise;
    an OOS prediction is FN against a known truth and TN against an OOS truth.
    """
    tp = fp = fn = tn = 0
    for predicted, truth in events:
        if predicted == OOS:
            if truth == OOS:
                tn += 1
            else:
                fn += 1
        elif predicted == truth:
            tp += 1
        else:
            fp += 1
    return ConfusionCounts(tp, fp, fn, tn)


def classification_events(frames: FrameSet) -> list[ClassificationEvent]:
    scenario, events = frames.scenario, frames.stream.events
    truth = {
        o.object_id: (OOS if scenario.is_distractor(o) else o.class_label) for o in scenario.objects
    }
    out = []
    for fr in frames.results:
        for i, oid, _ in fr.pairs:
            out.append(ClassificationEvent(fr.t, oid, events[i].label, truth[oid]))
    return out


def ambiguity_adjusted_score(
    events: Iterable[ClassificationEvent],
    ambiguity: Mapping[str, ObjectTrack],
    withheld: int = 0,
) -> AmbiguityResult:
    """Confusion counts that refuse to reward guesses the view cannot support.

    Inside an object's ambiguity interval a prediction within the ambiguity
    set, or an OOS prediction, is neutral; anything else is a false positive.
    ``withheld`` counts ambiguous object-frames where the detector stayed
    silent; those count as honest alongside OOS predictions.
    """
    scored: list[tuple[str, str]] = []
    neutral = 0
    ambiguous_total = withheld
    honest = withheld
    fp_extra = 0
    for ev in events:
        obj = ambiguity.get(ev.object_id)
        amb = obj.ambiguity_at(ev.t) if obj is not None else None
        if amb is None:
            scored.append((ev.predicted, ev.truth))
            continue
        ambiguous_total += 1
        if ev.predicted == OOS:
            neutral += 1
            honest += 1
        elif ev.predicted in amb:
            neutral += 1
        else:
            fp_extra += 1
    counts = oos_confusion(scored) + ConfusionCounts(fp=fp_extra)
    honesty = honest / ambiguous_total if ambiguous_total else 1.0
    return AmbiguityResult(counts, neutral, honesty)


def withheld_ambiguous(frames: FrameSet) -> int:
    """Ambiguous, visible object-frames with no matched prediction."""
    n = 0
    for k, fr in enumerate(frames.results):
        unmatched = set(fr.unmatched_objects)
        for obj in frames.scenario.objects:
            if obj.object_id in unmatched and obj.ambiguity_at(fr.t) is not None:
                n += 1
    return n


# --------------------------------------------------------------------------- #
# latency


def _qualifying(frames: FrameSet, obj: ObjectTrack) -> np.ndarray:
    """Frames where obj is visible, matched with its own label, and unambiguous."""
    events = frames.stream.events
    mask = np.zeros(len(frames.results), dtype=bool)
    visible = frames.visibility.visible[obj.object_id]
    for k, fr in enumerate(frames.results):
        if not visible[k]:
            continue
        for i, oid, _ in fr.pairs:
            if oid == obj.object_id:
                if events[i].label == obj.class_label and obj.ambiguity_at(fr.t) is None:
                    mask[k] = True
                break
    return mask


def first_run_end(mask: np.ndarray, length: int, start: int = 0, stop: int | None = None) -> int | None:
    """Index completing the first run of ``length`` consecutive True values."""
    stop = len(mask) if stop is None else stop
    run = 0
    for k in range(start, stop):
        run = run + 1 if mask[k] else 0
        if run >= length:
            return k
    return None


def _exposure(intervals) -> float:
    if not intervals:
        return 0.0
    return intervals[-1][1] - intervals[0][0]


def detection_latency(
    scenario: Scenario,
    stream: PredictionStream,
    config: EvaluationConfig,
    frames: FrameSet | None = None,
) -> list[ObjectOutcome]:
    """Entry-to-comprehension latency for every in-scope object.

    Comprehension is the frame completing the first run of
    ``persistence_frames`` consecutive qualifying frames. Exposure is the span
    from first entry to last visible time.
    """
    if frames is None:
        frames = match_stream(scenario, stream, config.tau_loc)
    times = frames.times
    outcomes = []
    for obj in scenario.objects:
        if scenario.is_distractor(obj):
            continue
        intervals = frames.visibility.intervals[obj.object_id]
        entry = intervals[0][0] if intervals else None
        exposure = _exposure(intervals)
        k = first_run_end(_qualifying(frames, obj), config.persistence_frames)
        comp = float(times[k]) if k is not None else None
        latency = comp - entry if comp is not None else None
        outcomes.append(_outcome(obj.object_id, entry, comp, latency, exposure, config.adl))
    return outcomes


def _outcome(oid, entry, comp, latency, exposure, adl) -> ObjectOutcome:
    excluded = latency is None and exposure < adl
    if latency is not None:
        compliant: bool | None = latency <= adl
    elif excluded:
        compliant = None
    else:
        compliant = False
    return ObjectOutcome(oid, entry, comp, latency, exposure, compliant, excluded)


def adl_compliance(outcomes: Sequence[ObjectOutcome], adl: float) -> float:
    """Share of eligible objects comprehended within ``adl`` of entering view.

    Never-comprehended objects whose exposure is shorter than ``adl`` are
    not eligible.
    """
    hits = 0
    eligible = 0
    for o in outcomes:
        if o.latency is None and o.exposure < adl:
            continue
        eligible += 1
        if o.latency is not None and o.latency <= adl:
            hits += 1
    return hits / eligible if eligible else 1.0


def latency_recall_curve(
    outcomes: Sequence[ObjectOutcome], adl_grid: Sequence[float]
) -> tuple[list[tuple[float, float]], float]:
    """Compliance over an ADL grid and its trapezoid area normalised by grid span."""
    points = [(float(a), adl_compliance(outcomes, a)) for a in adl_grid]
    if len(points) == 1:
        return points, points[0][1]
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    span = xs[-1] - xs[0]
    if span <= 0:
        return points, float(ys.mean())
    area = float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2.0))
    return points, area / float(span)


# --------------------------------------------------------------------------- #
# out-of-scope detection


def _window_ids(times: np.ndarray, window: float | None) -> np.ndarray:
    if window is None:
        return np.zeros(len(times), dtype=int)
    return np.floor(times / window + 1e-9).astype(int)


def oos_detection_counts(
    frames: FrameSet, window: float | None = None, persistence_frames: int = 1
) -> ConfusionCounts:
    """Window-level detection counts that give distractors a TN outcome.

    Per window, a visible distractor is FP if any frame matched it to an
    in-scope label and TN otherwise. A visible in-scope object is TP when a
    comprehension run completes inside the window and FN otherwise.
    """
    scenario = frames.scenario
    events = frames.stream.events
    wid = _window_ids(frames.times, window)
    matched = frames.matched()
    tp = fp = fn = tn = 0
    for obj in scenario.objects:
        visible = frames.visibility.visible[obj.object_id]
        distractor = scenario.is_distractor(obj)
        qual = None if distractor else _qualifying(frames, obj)
        for w in np.unique(wid):
            in_w = np.flatnonzero(wid == w)
            if not visible[in_w].any():
                continue
            if distractor:
                mislabeled = any(
                    events[matched[k][obj.object_id]].label != OOS
                    for k in in_w
                    if obj.object_id in matched[k]
                )
                if mislabeled:
                    fp += 1
                else:
                    tn += 1
            else:
                done = first_run_end(qual, persistence_frames, int(in_w[0]), int(in_w[-1]) + 1)
                if done is not None:
                    tp += 1
                else:
                    fn += 1
    return ConfusionCounts(tp, fp, fn, tn)


# --------------------------------------------------------------------------- #
# localization and tracking


def localization_error_stats(distances: Iterable[float]) -> LocalizationStats:
    d = np.asarray(list(distances), dtype=float)
    if d.size == 0:
        return LocalizationStats(0)
    return LocalizationStats(
        n=int(d.size),
        mean=float(d.mean()),
        median=float(np.median(d)),
        rms=float(math.sqrt(float(np.mean(d * d)))),
        max=float(d.max()),
    )


def correct_class_distances(frames: FrameSet) -> list[float]:
    events = frames.stream.events
    labels = {o.object_id: o.class_label for o in frames.scenario.objects}
    out = []
    for fr in frames.results:
        for i, oid, d in fr.pairs:
            if events[i].label == labels[oid] and frames.scenario.taxonomy.is_in_scope(labels[oid]):
                out.append(d)
    return out


def tracking_continuity(frames: FrameSet, config: EvaluationConfig) -> TrackingStats:
    """Identity switches, run fragmentation and re-acquisition after view gaps.

    Switches compare each matched track id with the object's previous matched
    id. A fragmentation is a matched frame followed by an unmatched one inside
    the same visibility run. Each visibility run after the first is a
    re-entry; it is recovered when a comprehension run completes within
    ``adl`` of the re-entry. Unrecovered re-entries shorter than ``adl`` are
    left out of the rate.
    """
    scenario = frames.scenario
    events = frames.stream.events
    times = frames.times
    matched = frames.matched()
    switches = frag = 0
    recovered = eligible = reentries = excluded = 0
    for obj in scenario.objects:
        if scenario.is_distractor(obj):
            continue
        oid = obj.object_id
        visible = frames.visibility.visible[oid]
        last_id = None
        for k in range(len(times)):
            if oid not in matched[k]:
                continue
            i = matched[k][oid]
            tid = events[i].track_id if events[i].track_id is not None else f"#event{i}"
            if last_id is not None and tid != last_id:
                switches += 1
            last_id = tid
        runs = mask_runs(visible)
        for a, b in runs:
            for k in range(a, b):
                if oid in matched[k] and oid not in matched[k + 1]:
                    frag += 1
        if len(runs) < 2:
            continue
        qual = _qualifying(frames, obj)
        for a, b in runs[1:]:
            reentries += 1
            t0 = float(times[a])
            done = first_run_end(qual, config.persistence_frames, a)
            ok = done is not None and float(times[done]) - t0 <= config.adl
            if not ok and float(times[b]) - t0 < config.adl:
                excluded += 1
                continue
            eligible += 1
            recovered += int(ok)
    rate = recovered / eligible if eligible else 1.0
    return TrackingStats(switches, frag, rate, reentries, excluded)
