"""Synthetic scenes and parametric detectors with known behaviour.

All randomness comes from numpy's PCG64 bit generator seeded explicitly;
the generator name is written into scenario metadata.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ConfigError, PlacementError
from .geometry import VisibilityTimeline, compute_visibility, mask_runs
from .scenario import (
    OOS,
    AmbiguityInterval,
    CameraIntrinsics,
    CameraSample,
    CameraTrajectory,
    ClassTaxonomy,
    ObjectTrack,
    PredictionEvent,
    PredictionStream,
    Scenario,
    TrackSample,
    frame_times,
    interpolate_pose,
    make_stream,
    matrix_to_quat,
)

RNG_NAME = "numpy.random.PCG64"
MAX_REJECTIONS = 10_000
AMBIGUITY_EPS = 1e-6

DEFAULT_INTRINSICS = {
    "fx": 500.0, "fy": 500.0, "cx": 320.0, "cy": 240.0,
    "width": 640, "height": 480, "near": 0.05, "far": 100.0,
}


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


# --------------------------------------------------------------------------- #
# configuration


@dataclass(frozen=True)
class SceneConfig:
    """Scene generation parameters.

    ``class_shapes`` maps a label to full cuboid dimensions (not half-extents).
    ``trajectory`` is ``{"kind": "orbit", "radius", "height", "angular_speed",
    "phase"}`` with height measured from the region centre, or
    ``{"kind": "waypoints", "points": [{"t", "position", "target"}, ...]}``.
    ``occlusion_gaps`` are global time spans during which nothing is visible.
    """

    seed: int
    in_scope_labels: tuple[str, ...]
    class_shapes: Mapping[str, tuple[float, float, float]]
    region_min: tuple[float, float, float]
    region_max: tuple[float, float, float]
    duration: float
    frame_interval: float
    trajectory: Mapping[str, Any]
    n_in_scope: int = 1
    n_distractor: int = 0
    distractor_labels: tuple[str, ...] = ()
    intrinsics: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_INTRINSICS))
    occlusion_gaps: tuple[tuple[float, float], ...] = ()
    min_face_cos: float = 0.1

    def __post_init__(self):
        if self.n_in_scope < 0:
            raise ConfigError("n_in_scope", "must be >= 0")
        if self.n_distractor < 0:
            raise ConfigError("n_distractor", "must be >= 0")
        if self.n_distractor and not self.distractor_labels:
            raise ConfigError("distractor_labels", "needed when n_distractor > 0")
        for label in (*self.in_scope_labels, *self.distractor_labels):
            if label not in self.class_shapes:
                raise ConfigError("class_shapes", f"no shape for label '{label}'")
        for label, dims in self.class_shapes.items():
            if len(dims) != 3 or any(d <= 0 for d in dims):
                raise ConfigError("class_shapes", f"'{label}' needs 3 positive dimensions")
        if any(hi <= lo for lo, hi in zip(self.region_min, self.region_max)):
            raise ConfigError("region", "region must have positive size on every axis")
        if not self.duration > 0:
            raise ConfigError("duration", "must be positive")
        if not self.frame_interval > 0:
            raise ConfigError("frame_interval", "must be positive")
        kind = self.trajectory.get("kind")
        if kind == "orbit":
            if not float(self.trajectory.get("radius", 0)) > 0:
                raise ConfigError("trajectory.radius", "orbit radius must be positive")
        elif kind == "waypoints":
            if not self.trajectory.get("points"):
                raise ConfigError("trajectory.points", "at least one waypoint required")
        else:
            raise ConfigError("trajectory.kind", f"unknown trajectory kind {kind!r}")

    @property
    def center(self) -> np.ndarray:
        return (np.array(self.region_min) + np.array(self.region_max)) / 2.0

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SceneConfig":
        try:
            region = d["region"]
            return cls(
                seed=int(d["seed"]),
                in_scope_labels=tuple(d["in_scope_labels"]),
                distractor_labels=tuple(d.get("distractor_labels", ())),
                class_shapes={k: tuple(float(x) for x in v) for k, v in d["class_shapes"].items()},
                region_min=tuple(float(x) for x in region["min"]),
                region_max=tuple(float(x) for x in region["max"]),
                duration=float(d["duration"]),
                frame_interval=float(d["frame_interval"]),
                trajectory=dict(d["trajectory"]),
                n_in_scope=int(d.get("n_in_scope", 1)),
                n_distractor=int(d.get("n_distractor", 0)),
                intrinsics={**DEFAULT_INTRINSICS, **d.get("intrinsics", {})},
                occlusion_gaps=tuple(tuple(float(x) for x in g) for g in d.get("occlusion_gaps", ())),
                min_face_cos=float(d.get("min_face_cos", 0.1)),
            )
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]), "missing required field") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError("scene", str(exc)) from None


def _parse_delay(value: Any, name: str) -> tuple[float, float]:
    """A delay spec as (low, high); constant delays have low == high."""
    if isinstance(value, (int, float)):
        lo = hi = float(value)
    elif isinstance(value, Mapping) and value.get("kind") == "constant":
        lo = hi = float(value["value"])
    elif isinstance(value, Mapping) and value.get("kind") == "uniform":
        lo, hi = float(value["low"]), float(value["high"])
    else:
        raise ConfigError(name, f"expected a number or constant/uniform spec, got {value!r}")
    if lo < 0 or hi < lo:
        raise ConfigError(name, f"invalid delay range [{lo}, {hi}]")
    return lo, hi


AMBIGUITY_POLICIES = ("guess_uniform_in_set", "emit_oos", "emit_true_label")


@dataclass(frozen=True)
class DetectorModel:
    startup_latency: tuple[float, float] = (0.0, 0.0)
    reacquire_latency: tuple[float, float] = (0.0, 0.0)
    per_frame_detect_prob: float = 1.0
    localization_noise_sigma: float = 0.0
    confusion: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    ambiguity_policy: str = "emit_true_label"
    distractor_policy: str = "silent"
    mislabel_prob: float = 0.0
    id_switch_prob: float = 0.0
    confidence_range: tuple[float, float] = (0.5, 1.0)

    def __post_init__(self):
        for name in ("per_frame_detect_prob", "mislabel_prob", "id_switch_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(name, f"probability {p} outside [0, 1]")
        if not self.localization_noise_sigma >= 0:
            raise ConfigError("localization_noise_sigma", "must be >= 0")
        if self.ambiguity_policy not in AMBIGUITY_POLICIES:
            raise ConfigError("ambiguity_policy", f"unknown policy {self.ambiguity_policy!r}")
        if self.distractor_policy not in ("silent", "emit_oos", "mislabel"):
            raise ConfigError("distractor_policy", f"unknown policy {self.distractor_policy!r}")
        lo, hi = self.confidence_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError("confidence_range", f"invalid range {self.confidence_range}")
        for truth, dist in self.confusion.items():
            if any(p < 0 for p in dist.values()) or abs(sum(dist.values()) - 1.0) > 1e-9:
                raise ConfigError("confusion", f"row '{truth}' is not a probability distribution")

    @classmethod
    def ideal(cls) -> "DetectorModel":
        return cls(confidence_range=(1.0, 1.0))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DetectorModel":
        policy = d.get("distractor_policy", "silent")
        mislabel = 0.0
        if isinstance(policy, Mapping):
            if "mislabel_prob" not in policy:
                raise ConfigError("distractor_policy", f"unknown policy {policy!r}")
            mislabel = float(policy["mislabel_prob"])
            policy = "mislabel"
        try:
            return cls(
                startup_latency=_parse_delay(d.get("startup_latency", 0.0), "startup_latency"),
                reacquire_latency=_parse_delay(d.get("reacquire_latency", 0.0), "reacquire_latency"),
                per_frame_detect_prob=float(d.get("per_frame_detect_prob", 1.0)),
                localization_noise_sigma=float(d.get("localization_noise_sigma", 0.0)),
                confusion={k: dict(v) for k, v in d.get("confusion", {}).items()},
                ambiguity_policy=str(d.get("ambiguity_policy", "emit_true_label")),
                distractor_policy=policy,
                mislabel_prob=mislabel,
                id_switch_prob=float(d.get("id_switch_prob", 0.0)),
                confidence_range=tuple(float(x) for x in d.get("confidence_range", (0.5, 1.0))),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError("detector", str(exc)) from None


# --------------------------------------------------------------------------- #
# trajectories


def look_at(eye, target) -> np.ndarray:
    """Camera orientation quaternion looking from ``eye`` toward ``target``."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    return matrix_to_quat(np.column_stack([right, down, fwd]))


def _lerp_points(points: Sequence[Mapping[str, Any]], key: str, t: float) -> np.ndarray:
    ts = [float(p["t"]) for p in points]
    vals = [np.asarray(p[key], dtype=float) for p in points]
    if t <= ts[0] or len(ts) == 1:
        return vals[0]
    if t >= ts[-1]:
        return vals[-1]
    i = int(np.searchsorted(ts, t, side="right")) - 1
    alpha = (t - ts[i]) / (ts[i + 1] - ts[i])
    return (1 - alpha) * vals[i] + alpha * vals[i + 1]


def generate_trajectory(config: SceneConfig) -> CameraTrajectory:
    """Camera samples at every frame time for an orbit or waypoint path."""
    times = frame_times(config.duration, config.frame_interval)
    center = config.center
    spec = config.trajectory
    samples = []
    for t in times:
        t = float(t)
        if spec["kind"] == "orbit":
            r = float(spec["radius"])
            ang = float(spec.get("phase", 0.0)) + float(spec["angular_speed"]) * t
            eye = center + np.array([r * math.cos(ang), r * math.sin(ang), float(spec.get("height", 0.0))])
            target = center
        else:
            eye = _lerp_points(spec["points"], "position", t)
            pts = spec["points"]
            target = _lerp_points(pts, "target", t) if "target" in pts[0] else center
        q = look_at(eye, target)
        samples.append(CameraSample(t, tuple(float(x) for x in eye), tuple(float(x) for x in q)))
    return CameraTrajectory(tuple(samples))


# --------------------------------------------------------------------------- #
# ambiguity


def _presentable(shape: Sequence[float], dims: Sequence[float]) -> bool:
    """Can a cuboid with ``shape`` show exactly the dimension multiset ``dims``?"""
    want = sorted(dims)
    for combo in itertools.combinations(shape, len(want)):
        if all(abs(a - b) <= AMBIGUITY_EPS for a, b in zip(sorted(combo), want)):
            return True
    return False


def visible_dimensions(center, size, eye, min_face_cos: float = 0.1) -> list[float]:
    """Edge lengths exposed by the cuboid faces that face the camera.

    A face counts when the cosine between its outward normal and the
    direction to the camera exceeds ``min_face_cos``.
    """
    center = np.asarray(center, dtype=float)
    size = np.asarray(size, dtype=float)
    axes = set()
    for axis in range(3):
        for sign in (-1.0, 1.0):
            face = center.copy()
            face[axis] += sign * size[axis] / 2
            to_eye = np.asarray(eye, dtype=float) - face
            dist = np.linalg.norm(to_eye)
            if dist > 0 and sign * to_eye[axis] / dist > min_face_cos:
                axes.add(axis)
    edge_axes = sorted({a for face_axis in axes for a in range(3) if a != face_axis})
    return [float(size[a]) for a in edge_axes]


def ambiguity_labels(
    size: Sequence[float],
    label: str,
    center,
    eye,
    class_shapes: Mapping[str, Sequence[float]],
    min_face_cos: float = 0.1,
) -> frozenset[str]:
    dims = visible_dimensions(center, size, eye, min_face_cos)
    if not dims:
        return frozenset({label})
    out = {label}
    for other, shape in class_shapes.items():
        if _presentable(shape, dims):
            out.add(other)
    return frozenset(out)


def ambiguity_oracle(
    scenario: Scenario,
    obj: ObjectTrack,
    t: float,
    class_shapes: Mapping[str, Sequence[float]] | None = None,
    min_face_cos: float = 0.1,
) -> frozenset[str]:
    """Class labels whose cuboids could produce the object's current view.

    Candidate classes default to the in-scope labels, with shapes taken from
    the scenario's own objects (extent is a half-size).
    """
    if class_shapes is None:
        class_shapes = {}
        for o in scenario.objects:
            if scenario.taxonomy.is_in_scope(o.class_label):
                class_shapes.setdefault(o.class_label, tuple(2 * e for e in o.extent))
    size = tuple(2 * e for e in obj.extent)
    eye = interpolate_pose(scenario.trajectory, t).position
    return ambiguity_labels(size, obj.class_label, obj.position_at(t), eye, class_shapes, min_face_cos)


def _ambiguity_intervals(labels_per_frame, times, dt, duration) -> tuple[AmbiguityInterval, ...]:
    """Maximal runs of identical non-singleton sets, padded by half a frame."""
    out = []
    k = 0
    n = len(times)
    while k < n:
        labels = labels_per_frame[k]
        if len(labels) < 2:
            k += 1
            continue
        j = k
        while j + 1 < n and labels_per_frame[j + 1] == labels:
            j += 1
        t0 = max(0.0, float(times[k]) - dt / 2)
        t1 = min(duration, float(times[j]) + dt / 2)
        out.append(AmbiguityInterval((t0, t1), labels))
        k = j + 1
    return tuple(out)


# --------------------------------------------------------------------------- #
# scene generation


def _overlaps(c1, h1, c2, h2) -> bool:
    return all(abs(a - b) < ha + hb for a, b, ha, hb in zip(c1, c2, h1, h2))


def _subtract_gaps(gaps, times: np.ndarray, mask: np.ndarray):
    for g0, g1 in gaps:
        mask = mask & ~((times >= g0) & (times <= g1))
    # a single visible sample cannot form a t0 < t1 interval
    return tuple(
        (float(times[a]), float(times[b])) for a, b in mask_runs(mask) if b > a
    )


def generate_scene(config: SceneConfig) -> Scenario:
    """Place cuboid objects without overlap and attach an orbit/waypoint camera."""
    rng = make_rng(config.seed)
    labels = [config.in_scope_labels[int(rng.integers(len(config.in_scope_labels)))]
              for _ in range(config.n_in_scope)]
    labels += [config.distractor_labels[int(rng.integers(len(config.distractor_labels)))]
               for _ in range(config.n_distractor)]
    lo = np.array(config.region_min)
    hi = np.array(config.region_max)
    placed: list[tuple[np.ndarray, np.ndarray]] = []
    rejected = 0
    for label in labels:
        half = np.array(config.class_shapes[label]) / 2.0
        a, b = lo + half, hi - half
        if np.any(a > b):
            raise PlacementError(f"shape of '{label}' does not fit in the region")
        while True:
            c = a + (b - a) * rng.random(3)
            if not any(_overlaps(c, half, pc, ph) for pc, ph in placed):
                placed.append((c, half))
                break
            rejected += 1
            if rejected >= MAX_REJECTIONS:
                raise PlacementError(
                    f"could not place {len(labels)} objects after {MAX_REJECTIONS} rejected samples"
                )

    trajectory = generate_trajectory(config)
    times = frame_times(config.duration, config.frame_interval)
    in_scope_shapes = {l: config.class_shapes[l] for l in config.in_scope_labels}
    objects = []
    for n, (label, (c, half)) in enumerate(zip(labels, placed)):
        objects.append(
            ObjectTrack(
                object_id=f"obj{n:03d}",
                class_label=label,
                track=(TrackSample(0.0, tuple(float(x) for x in c)),),
                extent=tuple(float(x) for x in half),
            )
        )
    taxonomy = ClassTaxonomy(tuple(config.in_scope_labels), frozenset(config.distractor_labels))
    intrinsics = CameraIntrinsics(**config.intrinsics)
    base = Scenario(taxonomy, intrinsics, trajectory, tuple(objects), config.frame_interval, config.duration)

    vis = compute_visibility(base) if config.occlusion_gaps else None
    final = []
    for obj in objects:
        amb = ()
        if taxonomy.is_in_scope(obj.class_label):
            size = config.class_shapes[obj.class_label]
            per_frame = [
                ambiguity_labels(size, obj.class_label, obj.position_at(float(t)),
                                 np.array(s.position), in_scope_shapes, config.min_face_cos)
                for t, s in zip(times, trajectory.samples)
            ]
            amb = _ambiguity_intervals(per_frame, times, config.frame_interval, config.duration)
        authored = None
        if vis is not None:
            authored = _subtract_gaps(config.occlusion_gaps, times, vis.visible[obj.object_id])
        final.append(
            ObjectTrack(obj.object_id, obj.class_label, obj.track, obj.extent, authored, amb)
        )
    metadata = {"generator": "doceval.simulator", "rng": RNG_NAME, "seed": config.seed}
    return Scenario(
        taxonomy, intrinsics, trajectory, tuple(final), config.frame_interval, config.duration,
        metadata=metadata,
    )


# --------------------------------------------------------------------------- #
# detector simulation


def _draw_delay(rng: np.random.Generator, spec: tuple[float, float]) -> float:
    lo, hi = spec
    u = rng.random()
    return lo if hi == lo else lo + (hi - lo) * u


def _draw_label(rng: np.random.Generator, dist: Mapping[str, float]) -> str:
    u = rng.random()
    acc = 0.0
    keys = sorted(dist)
    for k in keys:
        acc += dist[k]
        if u < acc:
            return k
    return keys[-1]


def simulate_detector(
    scenario: Scenario,
    model: DetectorModel,
    seed: int,
    visibility: VisibilityTimeline | None = None,
) -> PredictionStream:
    """Emit per-frame predictions for visible objects under a detector model.

    An object can be reported only once its startup delay has elapsed since
    first entering view, and after each later re-entry once the re-acquire
    delay has also elapsed.
    """
    rng = make_rng(seed)
    vis = visibility if visibility is not None else compute_visibility(scenario)
    times = vis.frame_times
    in_scope = list(scenario.taxonomy.in_scope_labels)
    objs = scenario.objects

    startup = [_draw_delay(rng, model.startup_latency) for _ in objs]
    ready_at: list[np.ndarray] = []
    for n, obj in enumerate(objs):
        gate = np.full(len(times), np.inf)
        runs = mask_runs(vis.visible[obj.object_id])
        first = np.inf
        for r, (a, b) in enumerate(runs):
            if r == 0:
                entry = vis.entry_time(obj.object_id)
                start = entry if entry is not None else float(times[a])
                first = start + startup[n]
                gate[a:b + 1] = first
            else:
                # a re-entry never shortens the startup delay
                gate[a:b + 1] = max(first, float(times[a]) + _draw_delay(rng, model.reacquire_latency))
        ready_at.append(gate)

    generation = [0] * len(objs)
    lo_c, hi_c = model.confidence_range
    events = []
    for k, t in enumerate(times):
        t = float(t)
        for n, obj in enumerate(objs):
            if not vis.visible[obj.object_id][k]:
                continue
            if t < ready_at[n][k] - 1e-9:
                continue
            if rng.random() >= model.per_frame_detect_prob:
                continue
            truth = np.asarray(obj.position_at(t))
            noise = rng.normal(0.0, 1.0, 3) * model.localization_noise_sigma
            pos = truth + noise if model.localization_noise_sigma > 0 else truth
            if scenario.is_distractor(obj):
                if model.distractor_policy == "silent":
                    continue
                label = OOS
                if model.distractor_policy == "mislabel" and rng.random() < model.mislabel_prob:
                    label = in_scope[int(rng.integers(len(in_scope)))]
            else:
                amb = obj.ambiguity_at(t)
                if amb is not None and model.ambiguity_policy != "emit_true_label":
                    if model.ambiguity_policy == "emit_oos":
                        label = OOS
                    else:
                        choices = sorted(amb)
                        label = choices[int(rng.integers(len(choices)))]
                else:
                    dist = model.confusion.get(obj.class_label)
                    label = _draw_label(rng, dist) if dist else obj.class_label
            if model.id_switch_prob > 0 and rng.random() < model.id_switch_prob:
                generation[n] += 1
            conf = lo_c + (hi_c - lo_c) * rng.random()
            events.append(
                PredictionEvent(
                    t=t,
                    label=label,
                    position=tuple(float(x) for x in pos),
                    confidence=float(conf),
                    track_id=f"trk-{obj.object_id}-{generation[n]}",
                )
            )
    meta = {"generator": "doceval.simulator", "rng": RNG_NAME, "seed": int(seed)}
    return make_stream(events, meta)
