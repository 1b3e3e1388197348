"""Ground-truth and prediction data model.

Conventions: meters and seconds; right-handed world frame with +Z up.
Camera frame is the standard pinhole one (+Z forward, +X right, +Y down).
Orientations are unit quaternions ``[w, x, y, z]`` rotating camera-frame
vectors into the world frame.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyTrajectory, ParseError, SchemaError, ValidationError

SCHEMA_VERSION = "doc-eval/1"
OOS = "OOS"

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]
Interval = tuple[float, float]

_QUAT_NORM_TOL = 1e-6


# --------------------------------------------------------------------------- #
# quaternion helpers


def quat_normalize(q: Sequence[float]) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_to_matrix(q: Sequence[float]) -> np.ndarray:
    """Rotation matrix of a unit quaternion ``[w, x, y, z]``."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion ``[w, x, y, z]`` with w >= 0 for a rotation matrix."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return -q if q[0] < 0 else q


def _as_unit(q: Sequence[float]) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if abs(float(np.linalg.norm(q)) - 1.0) <= 1e-12:
        return q
    return quat_normalize(q)


def slerp(q0: Sequence[float], q1: Sequence[float], alpha: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between two unit quaternions."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 0.9995:
        return quat_normalize(q0 + alpha * (q1 - q0))
    theta = math.acos(min(dot, 1.0))
    sin_theta = math.sin(theta)
    out = (math.sin((1 - alpha) * theta) * q0 + math.sin(alpha * theta) * q1) / sin_theta
    return quat_normalize(out)


# --------------------------------------------------------------------------- #
# domain types


@dataclass(frozen=True)
class ClassTaxonomy:
    in_scope_labels: tuple[str, ...]
    distractor_labels: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.in_scope_labels:
            raise ValidationError("taxonomy.in_scope_nonempty", "in_scope_labels is empty")
        if len(set(self.in_scope_labels)) != len(self.in_scope_labels):
            raise ValidationError("taxonomy.in_scope_unique", "duplicate in-scope label")
        overlap = set(self.in_scope_labels) & set(self.distractor_labels)
        if overlap:
            raise ValidationError(
                "taxonomy.disjoint", f"labels both in-scope and distractor: {sorted(overlap)}"
            )
        if OOS in self.in_scope_labels or OOS in self.distractor_labels:
            raise ValidationError("taxonomy.oos_reserved", f"'{OOS}' is a reserved label")

    @property
    def all_labels(self) -> frozenset[str]:
        return frozenset(self.in_scope_labels) | self.distractor_labels

    def is_in_scope(self, label: str) -> bool:
        return label in self.in_scope_labels


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("intrinsics.focal_positive", f"fx={self.fx}, fy={self.fy}")
        if not (0 < self.near < self.far):
            raise ValidationError("intrinsics.clip_order", f"near={self.near}, far={self.far}")
        if self.width < 1 or self.height < 1:
            raise ValidationError("intrinsics.image_size", f"{self.width}x{self.height}")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraSample:
    t: float
    position: Vec3
    orientation: Quat


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray
    clamped: bool = False

    @cached_property
    def _rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation matrix."""
        return self._rotation


@dataclass(frozen=True)
class CameraTrajectory:
    samples: tuple[CameraSample, ...]

    def __post_init__(self):
        _check_increasing([s.t for s in self.samples], "trajectory.timestamps_increasing")
        for s in self.samples:
            n = math.sqrt(sum(c * c for c in s.orientation))
            if abs(n - 1.0) > _QUAT_NORM_TOL:
                raise ValidationError(
                    "trajectory.quaternion_unit", f"|q|={n!r} at t={s.t!r}"
                )

    @property
    def times(self) -> list[float]:
        return [s.t for s in self.samples]


@dataclass(frozen=True)
class AmbiguityInterval:
    interval: Interval
    labels: frozenset[str]

    def contains(self, t: float) -> bool:
        return self.interval[0] <= t <= self.interval[1]


@dataclass(frozen=True)
class TrackSample:
    t: float
    position: Vec3


@dataclass(frozen=True)
class ObjectTrack:
    object_id: str
    class_label: str
    track: tuple[TrackSample, ...]
    extent: Vec3
    visibility_intervals: tuple[Interval, ...] | None = None
    ambiguity_intervals: tuple[AmbiguityInterval, ...] = ()

    def __post_init__(self):
        oid = self.object_id
        if not self.track:
            raise ValidationError("object.track_nonempty", "track has no samples", oid)
        _check_increasing([s.t for s in self.track], "object.timestamps_increasing", oid)
        if any(e < 0 for e in self.extent):
            raise ValidationError("object.extent_nonnegative", f"extent={self.extent}", oid)
        if self.visibility_intervals is not None:
            _check_intervals(self.visibility_intervals, "object.visibility_intervals", oid)
        _check_intervals(
            [a.interval for a in self.ambiguity_intervals], "object.ambiguity_intervals", oid
        )
        for amb in self.ambiguity_intervals:
            if self.class_label not in amb.labels or len(amb.labels) < 2:
                raise ValidationError(
                    "object.ambiguity_set",
                    f"set {sorted(amb.labels)} must contain '{self.class_label}' and another label",
                    oid,
                )

    def position_at(self, t: float) -> np.ndarray:
        """Centroid at time t, linearly interpolated and clamped to the track span."""
        ts = [s.t for s in self.track]
        if len(ts) == 1 or t <= ts[0]:
            return np.array(self.track[0].position, dtype=float)
        if t >= ts[-1]:
            return np.array(self.track[-1].position, dtype=float)
        i = int(np.searchsorted(ts, t, side="right")) - 1
        a, b = self.track[i], self.track[i + 1]
        alpha = (t - a.t) / (b.t - a.t)
        return (1 - alpha) * np.array(a.position) + alpha * np.array(b.position)

    def ambiguity_at(self, t: float) -> frozenset[str] | None:
        for amb in self.ambiguity_intervals:
            if amb.contains(t):
                return amb.labels
        return None


@dataclass(frozen=True)
class Scenario:
    taxonomy: ClassTaxonomy
    intrinsics: CameraIntrinsics
    trajectory: CameraTrajectory
    objects: tuple[ObjectTrack, ...]
    frame_interval: float
    duration: float
    schema_version: str = SCHEMA_VERSION
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.frame_interval > 0:
            raise ValidationError("scenario.frame_interval_positive", f"{self.frame_interval}")
        labels = self.taxonomy.all_labels
        seen = set()
        for obj in self.objects:
            if obj.object_id in seen:
                raise ValidationError("scenario.object_id_unique", "duplicate id", obj.object_id)
            seen.add(obj.object_id)
            if obj.class_label not in labels:
                raise ValidationError(
                    "scenario.label_in_taxonomy",
                    f"class label '{obj.class_label}' not in taxonomy",
                    obj.object_id,
                )
            for amb in obj.ambiguity_intervals:
                unknown = amb.labels - labels
                if unknown:
                    raise ValidationError(
                        "scenario.label_in_taxonomy",
                        f"ambiguity labels {sorted(unknown)} not in taxonomy",
                        obj.object_id,
                    )
        stamps = [s.t for s in self.trajectory.samples]
        for obj in self.objects:
            stamps.extend(s.t for s in obj.track)
        if stamps and self.duration < max(stamps):
            raise ValidationError(
                "scenario.duration_covers_timestamps", f"duration {self.duration} < {max(stamps)}"
            )

    def object(self, object_id: str) -> ObjectTrack:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(object_id)

    def is_distractor(self, obj: ObjectTrack) -> bool:
        return not self.taxonomy.is_in_scope(obj.class_label)

    def frame_times(self) -> np.ndarray:
        return frame_times(self.duration, self.frame_interval)

    def digest(self) -> str:
        blob = json.dumps(scenario_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PredictionEvent:
    t: float
    label: str
    position: Vec3
    confidence: float
    track_id: str | None = None


@dataclass(frozen=True)
class PredictionStream:
    events: tuple[PredictionEvent, ...] = ()
    source_metadata: Mapping[str, Any] = field(default_factory=dict)
    reordered: int = 0

    def __len__(self):
        return len(self.events)


def frame_times(duration: float, frame_interval: float) -> np.ndarray:
    """Nominal capture times k * frame_interval covering [0, duration]."""
    n = int(math.floor(duration / frame_interval + 1e-9))
    # k * dt may overshoot duration by an ulp on the last frame
    return np.minimum(np.arange(n + 1) * frame_interval, duration)


def frame_index(t: float, frame_interval: float) -> int:
    return int(round(t / frame_interval))


# --------------------------------------------------------------------------- #
# validation helpers


def _check_increasing(ts: Sequence[float], invariant: str, object_id: str | None = None):
    for a, b in zip(ts, ts[1:]):
        if not b > a:
            raise ValidationError(invariant, f"timestamps not strictly increasing at {b!r}", object_id)


def _check_intervals(intervals: Iterable[Interval], invariant: str, object_id: str | None):
    prev_end = -math.inf
    for t0, t1 in intervals:
        if not t0 < t1:
            raise ValidationError(invariant, f"interval [{t0}, {t1}] needs t0 < t1", object_id)
        if t0 < prev_end:
            raise ValidationError(invariant, f"interval starting at {t0} overlaps", object_id)
        prev_end = t1


# --------------------------------------------------------------------------- #
# pose interpolation


def interpolate_pose(trajectory: CameraTrajectory, t: float) -> Pose:
    """Camera pose at time t.

    Position is interpolated linearly, orientation by shortest-arc slerp.
    Queries outside the sampled span are clamped and flagged.
    """
    samples = trajectory.samples
    if not samples:
        raise EmptyTrajectory("trajectory has no samples")
    first, last = samples[0], samples[-1]
    if t <= first.t or len(samples) == 1:
        clamped = t < first.t or t > first.t
        return Pose(np.array(first.position, float), _as_unit(first.orientation), clamped)
    if t >= last.t:
        return Pose(np.array(last.position, float), _as_unit(last.orientation), t > last.t)
    times = trajectory.times
    i = int(np.searchsorted(times, t, side="right")) - 1
    a, b = samples[i], samples[i + 1]
    if t == a.t:
        return Pose(np.array(a.position, float), _as_unit(a.orientation))
    alpha = (t - a.t) / (b.t - a.t)
    pos = (1 - alpha) * np.array(a.position, float) + alpha * np.array(b.position, float)
    return Pose(pos, slerp(a.orientation, b.orientation, alpha))


# --------------------------------------------------------------------------- #
# serialization


def _vec(value: Any, n: int, what: str, object_id: str | None = None) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ValidationError(f"{what}.shape", f"expected {n} numbers, got {value!r}", object_id)
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{what}.numeric", str(exc), object_id) from None


def _require(d: Mapping, key: str, where: str, object_id: str | None = None):
    if key not in d:
        raise ValidationError(f"{where}.{key}", "missing required key", object_id)
    return d[key]


def scenario_from_dict(data: Mapping[str, Any]) -> Scenario:
    if not isinstance(data, Mapping):
        raise ParseError("scenario root must be a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unknown schema_version {version!r}, expected {SCHEMA_VERSION!r}")

    tax = _require(data, "taxonomy", "scenario")
    taxonomy = ClassTaxonomy(
        in_scope_labels=tuple(_require(tax, "in_scope", "taxonomy")),
        distractor_labels=frozenset(tax.get("distractors", ())),
    )

    cam = _require(data, "camera", "scenario")
    intr = _require(cam, "intrinsics", "camera")
    try:
        intrinsics = CameraIntrinsics(
            fx=float(intr["fx"]),
            fy=float(intr["fy"]),
            cx=float(intr["cx"]),
            cy=float(intr["cy"]),
            width=int(intr["width"]),
            height=int(intr["height"]),
            near=float(intr["near"]),
            far=float(intr["far"]),
        )
    except KeyError as exc:
        raise ValidationError(f"intrinsics.{exc.args[0]}", "missing required key") from None
    samples = tuple(
        CameraSample(
            t=float(_require(s, "t", "trajectory")),
            position=_vec(_require(s, "position", "trajectory"), 3, "trajectory.position"),
            orientation=_vec(_require(s, "orientation", "trajectory"), 4, "trajectory.orientation"),
        )
        for s in _require(cam, "trajectory", "camera")
    )
    if not samples:
        raise ValidationError("trajectory.nonempty", "camera trajectory has no samples")
    trajectory = CameraTrajectory(samples)

    objects = []
    for raw in _require(data, "objects", "scenario"):
        oid = str(_require(raw, "object_id", "object"))
        vis = raw.get("visibility_intervals")
        objects.append(
            ObjectTrack(
                object_id=oid,
                class_label=str(_require(raw, "class_label", "object", oid)),
                track=tuple(
                    TrackSample(float(s["t"]), _vec(s["position"], 3, "object.track", oid))
                    for s in _require(raw, "track", "object", oid)
                ),
                extent=_vec(_require(raw, "extent", "object", oid), 3, "object.extent", oid),
                visibility_intervals=None
                if vis is None
                else tuple(_vec(iv, 2, "object.visibility_intervals", oid) for iv in vis),
                ambiguity_intervals=tuple(
                    AmbiguityInterval(
                        _vec(a["interval"], 2, "object.ambiguity_intervals", oid),
                        frozenset(a["labels"]),
                    )
                    for a in raw.get("ambiguity_intervals", ())
                ),
            )
        )
    return Scenario(
        taxonomy=taxonomy,
        intrinsics=intrinsics,
        trajectory=trajectory,
        objects=tuple(objects),
        frame_interval=float(_require(data, "frame_interval", "scenario")),
        duration=float(_require(data, "duration", "scenario")),
        schema_version=version,
        metadata=dict(data.get("metadata", {})),
    )


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    out: dict[str, Any] = {
        "schema_version": s.schema_version,
        "taxonomy": {
            "in_scope": list(s.taxonomy.in_scope_labels),
            "distractors": sorted(s.taxonomy.distractor_labels),
        },
        "camera": {
            "intrinsics": {
                "fx": s.intrinsics.fx,
                "fy": s.intrinsics.fy,
                "cx": s.intrinsics.cx,
                "cy": s.intrinsics.cy,
                "width": s.intrinsics.width,
                "height": s.intrinsics.height,
                "near": s.intrinsics.near,
                "far": s.intrinsics.far,
            },
            "trajectory": [
                {"t": c.t, "position": list(c.position), "orientation": list(c.orientation)}
                for c in s.trajectory.samples
            ],
        },
        "objects": [
            {
                "object_id": o.object_id,
                "class_label": o.class_label,
                "track": [{"t": p.t, "position": list(p.position)} for p in o.track],
                "extent": list(o.extent),
                "visibility_intervals": None
                if o.visibility_intervals is None
                else [list(iv) for iv in o.visibility_intervals],
                "ambiguity_intervals": [
                    {"interval": list(a.interval), "labels": sorted(a.labels)}
                    for a in o.ambiguity_intervals
                ],
            }
            for o in s.objects
        ],
        "frame_interval": s.frame_interval,
        "duration": s.duration,
    }
    if s.metadata:
        out["metadata"] = dict(s.metadata)
    return out


def _read_json(path: str | Path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None


def load_scenario(path: str | Path) -> Scenario:
    data = _read_json(path)
    try:
        return scenario_from_dict(data)
    except (TypeError, AttributeError, KeyError) as exc:
        raise ParseError(f"{path}: unexpected structure ({exc!r})") from None


def dumps_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=1, sort_keys=True) + "\n"


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps_scenario(s), encoding="utf-8")


# --------------------------------------------------------------------------- #
# predictions


def _event_from_record(rec: Any, taxonomy: ClassTaxonomy, lineno: int) -> PredictionEvent:
    where = f"line {lineno}"
    if not isinstance(rec, Mapping):
        raise ParseError(f"{where}: record must be a JSON object")
    try:
        t = float(rec["t"])
        label = str(rec["label"])
        pos = _vec(rec["pos"], 3, "prediction.pos")
        conf = float(rec["conf"])
    except KeyError as exc:
        raise ValidationError(f"prediction.{exc.args[0]}", f"{where}: missing required key") from None
    except (TypeError, ValueError) as exc:
        raise ValidationError("prediction.numeric", f"{where}: {exc}") from None
    if not t >= 0:
        raise ValidationError("prediction.time_nonnegative", f"{where}: t={t}")
    if not 0.0 <= conf <= 1.0:
        raise ValidationError("prediction.confidence_range", f"{where}: conf={conf}")
    if label != OOS and not taxonomy.is_in_scope(label):
        raise ValidationError(
            "prediction.label_valid", f"{where}: label '{label}' is neither OOS nor in-scope"
        )
    track_id = rec.get("track_id")
    return PredictionEvent(t, label, pos, conf, None if track_id is None else str(track_id))


def make_stream(
    events: Iterable[PredictionEvent], source_metadata: Mapping[str, Any] | None = None
) -> PredictionStream:
    """Stable-sort events by time and count how many arrived out of order."""
    events = list(events)
    reordered = 0
    latest = -math.inf
    for ev in events:
        if ev.t < latest:
            reordered += 1
        latest = max(latest, ev.t)
    ordered = tuple(sorted(events, key=lambda e: e.t))
    meta = dict(source_metadata or {})
    return PredictionStream(ordered, meta, reordered)


def load_predictions(path: str | Path, taxonomy: ClassTaxonomy) -> PredictionStream:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    events = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path} line {lineno}: {exc}") from None
        events.append(_event_from_record(rec, taxonomy, lineno))
    return make_stream(events, {"path": str(path)})


def event_to_record(ev: PredictionEvent) -> dict[str, Any]:
    return {
        "t": ev.t,
        "label": ev.label,
        "pos": list(ev.position),
        "conf": ev.confidence,
        "track_id": ev.track_id,
    }


def dumps_predictions(stream: PredictionStream) -> str:
    return "".join(json.dumps(event_to_record(ev)) + "\n" for ev in stream.events)


def save_predictions(stream: PredictionStream, path: str | Path) -> None:
    Path(path).write_text(dumps_predictions(stream), encoding="utf-8")


def predictions_digest(stream: PredictionStream) -> str:
    return hashlib.sha256(dumps_predictions(stream).encode("utf-8")).hexdigest()
