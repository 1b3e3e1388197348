from __future__ import annotations

import json
import math
from pathlib import Path

import pytest

from doceval.scenario import (
    CameraIntrinsics,
    CameraSample,
    CameraTrajectory,
    ClassTaxonomy,
    ObjectTrack,
    Scenario,
    TrackSample,
)
from doceval.simulator import SceneConfig

# shapes chosen so no two classes share a face: views never become ambiguous
DISTINCT_SHAPES = {
    "cube": (0.3, 0.3, 0.3),
    "rect": (0.2, 0.2, 0.5),
    "plate": (0.4, 0.25, 0.05),
    "tile": (0.35, 0.35, 0.02),
    "brick": (0.45, 0.15, 0.1),
}


def scene_config(**overrides) -> SceneConfig:
    base = dict(
        seed=7,
        in_scope_labels=("cube", "rect", "plate"),
        distractor_labels=("tile", "brick"),
        class_shapes=DISTINCT_SHAPES,
        region_min=(-2.0, -2.0, 0.0),
        region_max=(2.0, 2.0, 0.6),
        duration=10.0,
        frame_interval=0.1,
        trajectory={"kind": "orbit", "radius": 6.0, "height": 2.0, "angular_speed": 0.2},
        n_in_scope=5,
        n_distractor=2,
    )
    base.update(overrides)
    return SceneConfig(**base)


IDENTITY_Q = (1.0, 0.0, 0.0, 0.0)
# camera at origin looking along world +Y with +Z up: camera x -> world +X, camera y -> world -Z
LOOK_PLUS_Y_Q = (math.sqrt(0.5), -math.sqrt(0.5), 0.0, 0.0)


def intrinsics(**kw) -> CameraIntrinsics:
    base = dict(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480, near=0.05, far=100.0)
    base.update(kw)
    return CameraIntrinsics(**base)


def static_scenario(objects, duration=2.0, frame_interval=0.5, in_scope=("cube", "rect"),
                    distractors=("tile",), q=IDENTITY_Q) -> Scenario:
    """Static camera at the origin; identity orientation looks along world +Z."""
    traj = CameraTrajectory((CameraSample(0.0, (0.0, 0.0, 0.0), q),))
    return Scenario(
        taxonomy=ClassTaxonomy(tuple(in_scope), frozenset(distractors)),
        intrinsics=intrinsics(),
        trajectory=traj,
        objects=tuple(objects),
        frame_interval=frame_interval,
        duration=duration,
    )


def obj(oid, label, pos, extent=(0.1, 0.1, 0.1), **kw) -> ObjectTrack:
    return ObjectTrack(oid, label, (TrackSample(0.0, tuple(pos)),), tuple(extent), **kw)


@pytest.fixture
def minimal_scenario_dict():
    return {
        "schema_version": "doc-eval/1",
        "taxonomy": {"in_scope": ["cube"], "distractors": []},
        "camera": {
            "intrinsics": {"fx": 500, "fy": 500, "cx": 320, "cy": 240, "width": 640, "height": 480,
                           "near": 0.05, "far": 100},
            "trajectory": [
                {"t": 0.0, "position": [0, 0, 0], "orientation": [1, 0, 0, 0]},
                {"t": 1.0, "position": [0, 0, 0], "orientation": [1, 0, 0, 0]},
            ],
        },
        "objects": [
            {"object_id": "a", "class_label": "cube", "track": [{"t": 0.0, "position": [0, 0, 2]}],
             "extent": [0.1, 0.1, 0.1]}
        ],
        "frame_interval": 0.1,
        "duration": 1.0,
    }


@pytest.fixture
def write_json(tmp_path):
    def _write(name, payload) -> Path:
        p = tmp_path / name
        p.write_text(json.dumps(payload), encoding="utf-8")
        return p

    return _write


# --------------------------------------------------------------------------- #
# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _ACCEPTANCE[number] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[number]
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
