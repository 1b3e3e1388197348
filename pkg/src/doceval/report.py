"""End-to-end evaluation: visibility, per-frame matching, legacy and DOC metrics."""

from __future__ import annotations

import csv
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import metrics_doc as doc
from .errors import InvariantViolation
from .geometry import VisibilityTimeline, compute_visibility, projected_bbox
from .matching import FrameMatchResult, match_iou
from .metrics_legacy import (
    ConfusionCounts,
    average_precision,
    confusion_detection,
    pr_curve,
    precision_recall,
)
from .scenario import OOS, PredictionStream, Scenario, interpolate_pose, predictions_digest

REPORT_SCHEMA = "doc-eval-report/1"

NOTES = (
    "comprehension = first run of persistence_frames consecutive visible frames matched within "
    "tau_loc with the object's own label, outside ambiguity intervals",
    "never-comprehended objects with exposure (first entry to last visible time) shorter than the "
    "ADL are excluded from the compliance denominator",
    "OOS predictions inside ambiguity intervals are neutral and counted as honest, not as TN",
    "legacy regime ignores OOS predictions; prediction boxes use the class extent seen in the scenario",
)


def _class_extents(scenario: Scenario) -> dict[str, tuple[float, float, float]]:
    out: dict[str, tuple[float, float, float]] = {}
    for obj in scenario.objects:
        out.setdefault(obj.class_label, obj.extent)
    return out


def legacy_frames(
    scenario: Scenario,
    stream: PredictionStream,
    visibility: VisibilityTimeline,
    buckets: list[list[int]],
    iou_threshold: float,
) -> list[FrameMatchResult]:
    """Per-frame IoU matching of projected boxes against visible in-scope objects."""
    extents = _class_extents(scenario)
    fallback = (
        tuple(float(x) for x in np.median([o.extent for o in scenario.objects], axis=0))
        if scenario.objects
        else (0.05, 0.05, 0.05)
    )
    results = []
    for k, t in enumerate(visibility.frame_times):
        t = float(t)
        pose = interpolate_pose(scenario.trajectory, t)
        truths = []
        for obj in scenario.objects:
            if scenario.is_distractor(obj) or not visibility.visible[obj.object_id][k]:
                continue
            box = projected_bbox(pose, scenario.intrinsics, obj.position_at(t), obj.extent)
            if box is not None:
                truths.append((obj.object_id, box))
        boxed, unboxed = [], []
        for i in buckets[k]:
            ev = stream.events[i]
            if ev.label == OOS:
                continue
            box = projected_bbox(pose, scenario.intrinsics, ev.position, extents.get(ev.label, fallback))
            (boxed if box is not None else unboxed).append((i, box))
        fr = match_iou([b for _, b in boxed], truths, iou_threshold, t=t)
        idx = [i for i, _ in boxed]
        results.append(
            FrameMatchResult(
                t,
                tuple((idx[i], oid, s) for i, oid, s in fr.pairs),
                tuple(sorted([idx[i] for i in fr.unmatched_predictions] + [i for i, _ in unboxed])),
                fr.unmatched_objects,
            )
        )
    return results


def _counts(c: ConfusionCounts) -> dict[str, int]:
    return c.as_dict()


def evaluate(
    scenario: Scenario,
    stream: PredictionStream,
    config: doc.EvaluationConfig,
    visibility: VisibilityTimeline | None = None,
) -> dict[str, Any]:
    """Full report as a JSON-ready dict (without ``generated_at``)."""
    vis = visibility if visibility is not None else compute_visibility(scenario)
    frames = doc.match_stream(scenario, stream, config.tau_loc, vis)

    # legacy regime
    leg = legacy_frames(scenario, stream, vis, frames.members, config.iou_threshold)
    leg_counts = confusion_detection(leg)
    precision, recall = precision_recall(leg_counts, config.zero_division)
    scores, hits = [], []
    for fr in leg:
        matched = {i for i, _, _ in fr.pairs}
        for i in sorted(matched | set(fr.unmatched_predictions)):
            scores.append(stream.events[i].confidence)
            hits.append(i in matched)
    n_pos = leg_counts.tp + leg_counts.fn
    ap = average_precision(scores, hits, n_pos, config.zero_division)
    curve = pr_curve(scores, hits, n_pos)

    # DOC regime
    objects = {o.object_id: o for o in scenario.objects}
    amb = doc.ambiguity_adjusted_score(
        doc.classification_events(frames), objects, doc.withheld_ambiguous(frames)
    )
    cls_precision, cls_recall = precision_recall(amb.counts, config.zero_division)
    outcomes = sorted(doc.detection_latency(scenario, stream, config, frames), key=lambda o: o.object_id)
    compliance = doc.adl_compliance(outcomes, config.adl)
    lr_points, lr_auc = doc.latency_recall_curve(outcomes, config.adl_grid)
    oos_counts = doc.oos_detection_counts(frames, config.distractor_window, config.persistence_frames)
    oos_precision, oos_recall = precision_recall(oos_counts, config.zero_division)
    loc = doc.localization_error_stats(doc.correct_class_distances(frames))
    tracking = doc.tracking_continuity(frames, config)
    spurious = sum(len(fr.unmatched_predictions) for fr in frames.results)

    report = {
        "schema_version": REPORT_SCHEMA,
        "scenario_digest": scenario.digest(),
        "predictions_digest": predictions_digest(stream),
        "config": config.as_dict(),
        "legacy": {
            "counts": _counts(leg_counts),
            "precision": precision,
            "recall": recall,
            "ap": ap,
            "pr_curve": [
                {"threshold": p.threshold, "precision": p.precision, "recall": p.recall} for p in curve
            ],
            "per_frame": [
                {
                    "t": fr.t,
                    "tp": len(fr.pairs),
                    "fp": len(fr.unmatched_predictions),
                    "fn": len(fr.unmatched_objects),
                }
                for fr in leg
            ],
        },
        "doc": {
            "classification": {
                "counts": _counts(amb.counts),
                "precision": cls_precision,
                "recall": cls_recall,
                "neutral_count": amb.neutral_count,
                "honesty_rate": amb.honesty_rate,
            },
            "oos_detection": {
                "counts": _counts(oos_counts),
                "precision": oos_precision,
                "recall": oos_recall,
            },
            "outcomes": [o.as_dict() for o in outcomes],
            "adl_compliance": compliance,
            "latency_recall_curve": {
                "points": [{"adl": a, "compliance": c} for a, c in lr_points],
                "auc": lr_auc,
            },
            "localization": loc.as_dict(),
            "tracking": tracking.as_dict(),
            "spurious_predictions": spurious,
        },
        "diagnostics": {
            "reordered": stream.reordered,
            "dropped_out_of_range": frames.dropped,
            "excluded_short_exposure": [o.object_id for o in outcomes if o.excluded_short_exposure],
            "notes": list(NOTES),
        },
    }
    check_report(report)
    return report


def _walk_numbers(node, path=""):
    if isinstance(node, Mapping):
        for k, v in node.items():
            yield from _walk_numbers(v, f"{path}.{k}")
    elif isinstance(node, list):
        for i, v in enumerate(node):
            yield from _walk_numbers(v, f"{path}[{i}]")
    elif isinstance(node, (int, float)) and not isinstance(node, bool):
        yield path, node


def check_report(report: Mapping[str, Any]) -> None:
    """Raise InvariantViolation when a report breaks its own bounds."""
    for path, value in _walk_numbers(report):
        if isinstance(value, float) and not math.isfinite(value):
            raise InvariantViolation(f"non-finite value at {path}")
    for block in (report["legacy"]["counts"], report["doc"]["classification"]["counts"],
                  report["doc"]["oos_detection"]["counts"]):
        if min(block.values()) < 0:
            raise InvariantViolation(f"negative count in {block}")
    unit = [
        report["legacy"]["precision"], report["legacy"]["recall"], report["legacy"]["ap"],
        report["doc"]["adl_compliance"], report["doc"]["latency_recall_curve"]["auc"],
        report["doc"]["classification"]["honesty_rate"],
        report["doc"]["tracking"]["occlusion_recovery_rate"],
    ]
    if any(not 0.0 <= v <= 1.0 for v in unit):
        raise InvariantViolation(f"rate outside [0, 1]: {unit}")
    for o in report["doc"]["outcomes"]:
        if o["latency"] is not None and o["latency"] < -1e-9:
            raise InvariantViolation(f"negative latency for {o['object_id']}")


def dumps_report(report: Mapping[str, Any], generated_at: str | None = None) -> str:
    out = dict(report)
    out["generated_at"] = generated_at or datetime.now(timezone.utc).isoformat(timespec="seconds")
    return json.dumps(out, indent=2, sort_keys=True) + "\n"


def strip_generated_at(text: str) -> str:
    data = json.loads(text)
    data.pop("generated_at", None)
    return json.dumps(data, indent=2, sort_keys=True)


def write_plot_data(report: Mapping[str, Any], out_dir: str | Path, bin_width: float = 0.1) -> list[Path]:
    """CSV series: latency histogram, latency-recall curve and PR curve."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    latencies = [o["latency"] for o in report["doc"]["outcomes"] if o["latency"] is not None]
    path = out_dir / "latency_histogram.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_start", "bin_end", "count"])
        if latencies:
            n_bins = int(math.floor(max(latencies) / bin_width)) + 1
            counts = [0] * n_bins
            for lat in latencies:
                counts[min(int(math.floor(lat / bin_width + 1e-9)), n_bins - 1)] += 1
            for b, c in enumerate(counts):
                w.writerow([repr(b * bin_width), repr((b + 1) * bin_width), c])
    written.append(path)

    path = out_dir / "latency_recall.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["adl", "compliance"])
        for p in report["doc"]["latency_recall_curve"]["points"]:
            w.writerow([repr(p["adl"]), repr(p["compliance"])])
    written.append(path)

    path = out_dir / "pr_curve.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        for p in report["legacy"]["pr_curve"]:
            w.writerow([repr(p["threshold"]), repr(p["precision"]), repr(p["recall"])])
    written.append(path)
    return written


# (metric name, path into the report, True when higher is better)
LEGACY_METRICS = (
    ("precision", ("legacy", "precision"), True),
    ("recall", ("legacy", "recall"), True),
    ("ap", ("legacy", "ap"), True),
)
DOC_METRICS = (
    ("adl_compliance", ("doc", "adl_compliance"), True),
    ("latency_auc", ("doc", "latency_recall_curve", "auc"), True),
    ("classification_precision", ("doc", "classification", "precision"), True),
    ("classification_recall", ("doc", "classification", "recall"), True),
    ("oos_precision", ("doc", "oos_detection", "precision"), True),
    ("oos_recall", ("doc", "oos_detection", "recall"), True),
    ("honesty_rate", ("doc", "classification", "honesty_rate"), True),
    ("localization_rms", ("doc", "localization", "rms"), False),
    ("id_switches", ("doc", "tracking", "id_switches"), False),
    ("occlusion_recovery_rate", ("doc", "tracking", "occlusion_recovery_rate"), True),
)


def _get(report, path):
    node = report
    for key in path:
        node = node[key]
    return node


def compare_reports(a: Mapping[str, Any], b: Mapping[str, Any]) -> dict[str, Any]:
    """Side-by-side deltas (B minus A) and legacy/DOC direction disagreements.

    A disagreement is a legacy metric and a DOC metric that move in opposite
    directions once each is oriented so that positive means better.
    """
    rows = []
    for regime, table in (("legacy", LEGACY_METRICS), ("doc", DOC_METRICS)):
        for name, path, higher_better in table:
            va, vb = _get(a, path), _get(b, path)
            delta = None if va is None or vb is None else vb - va
            trend = 0
            if delta:
                trend = 1 if (delta > 0) == higher_better else -1
            rows.append({"regime": regime, "metric": name, "a": va, "b": vb, "delta": delta, "trend": trend})
    legacy = [r for r in rows if r["regime"] == "legacy" and r["trend"]]
    docs = [r for r in rows if r["regime"] == "doc" and r["trend"]]
    disagreements = [
        {"legacy": lr["metric"], "legacy_trend": lr["trend"], "doc": dr["metric"], "doc_trend": dr["trend"]}
        for lr in legacy
        for dr in docs
        if lr["trend"] != dr["trend"]
    ]
    return {"rows": rows, "disagreements": disagreements}


def format_comparison(summary: Mapping[str, Any]) -> str:
    def fmt(v):
        if v is None:
            return "-"
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    arrow = {1: "better", -1: "worse", 0: "same"}
    lines = [f"{'regime':<7} {'metric':<26} {'A':>10} {'B':>10} {'delta':>10}  trend"]
    for r in summary["rows"]:
        lines.append(
            f"{r['regime']:<7} {r['metric']:<26} {fmt(r['a']):>10} {fmt(r['b']):>10} "
            f"{fmt(r['delta']):>10}  {arrow[r['trend']]}"
        )
    if summary["disagreements"]:
        lines.append("")
        for d in summary["disagreements"]:
            lines.append(
                f"DISAGREE: legacy {d['legacy']} {arrow[d['legacy_trend']]} "
                f"vs doc {d['doc']} {arrow[d['doc_trend']]}"
            )
    else:
        lines.append("")
        lines.append("no legacy/doc disagreement")
    return "\n".join(lines)
