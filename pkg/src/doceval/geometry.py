"""Pinhole projection, frustum tests, visibility timelines, 2D boxes and distances."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .scenario import CameraIntrinsics, Interval, Pose, Scenario, interpolate_pose


@dataclass(frozen=True)
class BBox2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def shifted(self, dx: float, dy: float) -> "BBox2D":
        return BBox2D(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)


@dataclass(frozen=True)
class VisibilityTimeline:
    """Per-object visibility at frame resolution.

    ``intervals`` holds the maximal visible runs as ``(t_enter, t_exit)``
    sample times (or the authored intervals verbatim). ``visible`` holds the
    per-frame boolean mask over ``frame_times``.
    """

    frame_times: np.ndarray
    intervals: dict[str, tuple[Interval, ...]]
    visible: dict[str, np.ndarray]

    def entry_time(self, object_id: str) -> float | None:
        ivs = self.intervals[object_id]
        return ivs[0][0] if ivs else None


def world_to_camera(pose: Pose, points: np.ndarray) -> np.ndarray:
    """Express world points (N x 3 or 3) in the camera frame."""
    r = pose.rotation()
    return (np.asarray(points, dtype=float) - pose.position) @ r


def project_points(pose: Pose, intrinsics: CameraIntrinsics, world_points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection: ``(uvz, ok)`` for an N x 3 array of world points.

    ``uvz`` rows are ``(u, v, depth)``; ``ok`` marks points strictly inside
    the near/far slab.
    """
    cam = world_to_camera(pose, np.atleast_2d(world_points))
    z = cam[:, 2]
    ok = (z > intrinsics.near) & (z < intrinsics.far)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
    return np.column_stack([u, v, z]), ok


def project_point(pose: Pose, intrinsics: CameraIntrinsics, world_point) -> tuple[float, float, float] | None:
    """Project a world point to ``(u, v, depth)``; None outside the near/far slab."""
    x, y, z = world_to_camera(pose, world_point)
    if z <= intrinsics.near or z >= intrinsics.far:
        return None
    u = intrinsics.fx * x / z + intrinsics.cx
    v = intrinsics.fy * y / z + intrinsics.cy
    return float(u), float(v), float(z)


def unproject(pose: Pose, intrinsics: CameraIntrinsics, u: float, v: float, depth: float) -> np.ndarray:
    """World point that projects to pixel (u, v) at the given camera depth."""
    cam = np.array(
        [(u - intrinsics.cx) * depth / intrinsics.fx, (v - intrinsics.cy) * depth / intrinsics.fy, depth]
    )
    return pose.rotation() @ cam + pose.position


def in_frustum(pose: Pose, intrinsics: CameraIntrinsics, point) -> bool:
    # strict on every face of the frustum
    proj = project_point(pose, intrinsics, point)
    if proj is None:
        return False
    u, v, _ = proj
    return 0.0 < u < intrinsics.width and 0.0 < v < intrinsics.height


def mask_runs(mask) -> list[tuple[int, int]]:
    """Inclusive (first, last) indices of each run of True values."""
    runs = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def _runs(times: np.ndarray, mask: np.ndarray) -> tuple[Interval, ...]:
    return tuple((float(times[a]), float(times[b])) for a, b in mask_runs(mask))


def compute_visibility(scenario: Scenario) -> VisibilityTimeline:
    """Sample centroid visibility at every frame time.

    Authored ``visibility_intervals`` replace the geometric result for that
    object.
    """
    times = scenario.frame_times()
    poses = [interpolate_pose(scenario.trajectory, float(t)) for t in times]
    intervals: dict[str, tuple[Interval, ...]] = {}
    visible: dict[str, np.ndarray] = {}
    for obj in scenario.objects:
        if obj.visibility_intervals is not None:
            mask = np.zeros(len(times), dtype=bool)
            for t0, t1 in obj.visibility_intervals:
                mask |= (times >= t0) & (times <= t1)
            intervals[obj.object_id] = tuple(obj.visibility_intervals)
        else:
            mask = np.array(
                [
                    in_frustum(pose, scenario.intrinsics, obj.position_at(float(t)))
                    for pose, t in zip(poses, times)
                ],
                dtype=bool,
            )
            intervals[obj.object_id] = _runs(times, mask)
        visible[obj.object_id] = mask
    return VisibilityTimeline(times, intervals, visible)


_CORNER_SIGNS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))


def box_corners(center, extent) -> np.ndarray:
    """The 8 corners of an axis-aligned cuboid given its half-extents."""
    return np.asarray(center, dtype=float) + _CORNER_SIGNS * np.asarray(extent, dtype=float)


def projected_bbox(pose: Pose, intrinsics: CameraIntrinsics, center, extent) -> BBox2D | None:
    """Image-aligned box around the projected cuboid corners, clipped to the image.

    Corners outside the near/far slab are skipped; fewer than two projecting
    corners yields None.
    """
    uvz, ok = project_points(pose, intrinsics, box_corners(center, extent))
    if ok.sum() < 2:
        return None
    pts = uvz[ok, :2]
    w, h = float(intrinsics.width), float(intrinsics.height)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return BBox2D(
        min(max(float(lo[0]), 0.0), w),
        min(max(float(lo[1]), 0.0), h),
        min(max(float(hi[0]), 0.0), w),
        min(max(float(hi[1]), 0.0), h),
    )


def iou(a: BBox2D, b: BBox2D) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def distance3(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2])
