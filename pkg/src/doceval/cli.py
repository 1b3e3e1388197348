"""Command-line entry point: ``doceval simulate | evaluate | compare``.

Exit codes: 0 success, 2 input or configuration error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, DocEvalError
from .metrics_doc import DEFAULT_ADL_GRID, EvaluationConfig
from .report import compare_reports, dumps_report, evaluate, format_comparison, write_plot_data
from .scenario import (
    load_predictions,
    load_scenario,
    predictions_digest,
    save_predictions,
    save_scenario,
)
from .simulator import DetectorModel, SceneConfig, generate_scene, simulate_detector

log = logging.getLogger("doceval")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError("arguments", message)


def _grid(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --adl-grid value {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="doceval", description="Simulate scenes, evaluate prediction streams, compare reports.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="generate a scenario (and predictions) from a config")
    sim.add_argument("config", type=Path)
    sim.add_argument("--out", type=Path, required=True)
    sim.add_argument("--seed", type=int, default=None, help="override the scene seed")

    ev = sub.add_parser("evaluate", help="score a prediction stream against a scenario")
    ev.add_argument("scenario", type=Path)
    ev.add_argument("predictions", type=Path)
    ev.add_argument("--out", type=Path, required=True)
    ev.add_argument("--adl", type=float, default=1.0)
    ev.add_argument("--tau-loc", type=float, default=0.25)
    ev.add_argument("--persistence", type=int, default=1)
    ev.add_argument("--iou-threshold", type=float, default=0.5)
    ev.add_argument("--adl-grid", type=_grid, default=DEFAULT_ADL_GRID)
    ev.add_argument("--distractor-window", type=float, default=None)
    ev.add_argument("--plot-data", action="store_true")
    ev.add_argument("--generated-at", default=None, help=argparse.SUPPRESS)

    cmp_ = sub.add_parser("compare", help="legacy vs DOC divergence between two reports")
    cmp_.add_argument("report_a", type=Path)
    cmp_.add_argument("report_b", type=Path)
    return p


def cmd_simulate(config_path: Path, out_dir: Path, seed: int | None = None) -> int:
    try:
        raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("config", str(exc)) from None
    if not isinstance(raw, dict) or "scene" not in raw:
        raise ConfigError("scene", "config must contain a 'scene' object")
    scene_raw = dict(raw["scene"])
    if seed is not None:
        scene_raw["seed"] = seed
    scene_cfg = SceneConfig.from_dict(scene_raw)
    model = DetectorModel.from_dict(raw["detector"]) if raw.get("detector") is not None else None

    scenario = generate_scene(scene_cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_scenario(scenario, out_dir / "scenario.json")
    print(f"scenario.json {scenario.digest()}")
    if model is not None:
        det_seed = int(raw.get("detector_seed", scene_cfg.seed + 1))
        stream = simulate_detector(scenario, model, det_seed)
        save_predictions(stream, out_dir / "predictions.jsonl")
        print(f"predictions.jsonl {predictions_digest(stream)}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    try:
        config = EvaluationConfig(
            adl=args.adl,
            tau_loc=args.tau_loc,
            persistence_frames=args.persistence,
            adl_grid=tuple(args.adl_grid),
            iou_threshold=args.iou_threshold,
            distractor_window=args.distractor_window,
        )
    except ValueError as exc:
        raise ConfigError("evaluation", str(exc)) from None
    scenario = load_scenario(args.scenario)
    stream = load_predictions(args.predictions, scenario.taxonomy)
    report = evaluate(scenario, stream, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps_report(report, args.generated_at), encoding="utf-8")
    print(f"report.json written to {out}")
    if args.plot_data:
        for path in write_plot_data(report, out):
            print(f"{path.name} written")
    return EXIT_OK


def cmd_compare(path_a: Path, path_b: Path) -> int:
    reports = []
    for p in (path_a, path_b):
        try:
            reports.append(json.loads(Path(p).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("report", f"{p}: {exc}") from None
    a, b = reports
    if a.get("scenario_digest") != b.get("scenario_digest"):
        print("error: reports were computed on different scenarios (digest mismatch)", file=sys.stderr)
        return EXIT_INPUT
    print(format_comparison(compare_reports(a, b)))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out, args.seed)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        return cmd_compare(args.report_a, args.report_b)
    except DocEvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_INPUT
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
