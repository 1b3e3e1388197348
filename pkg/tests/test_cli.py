import csv
import hashlib
import json
import subprocess
import sys

import pytest

from doceval.cli import main
from doceval.report import strip_generated_at

CONFIG = {
    "scene": {
        "seed": 11,
        "in_scope_labels": ["cube", "rect"],
        "distractor_labels": ["tile"],
        "class_shapes": {"cube": [0.3, 0.3, 0.3], "rect": [0.2, 0.2, 0.5], "tile": [0.35, 0.35, 0.02]},
        "region": {"min": [-1.5, -1.5, 0.0], "max": [1.5, 1.5, 0.5]},
        "duration": 6.0,
        "frame_interval": 0.1,
        "trajectory": {"kind": "orbit", "radius": 5.0, "height": 1.5, "angular_speed": 0.3},
        "n_in_scope": 3,
        "n_distractor": 1,
    },
    "detector": {
        "startup_latency": 0.3,
        "per_frame_detect_prob": 0.8,
        "localization_noise_sigma": 0.03,
        "distractor_policy": "emit_oos",
    },
}


@pytest.fixture
def simulated(tmp_path, write_json):
    cfg = write_json("cfg.json", CONFIG)
    out = tmp_path / "sim"
    assert main(["simulate", str(cfg), "--out", str(out)]) == 0
    return out


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_simulate_writes_both_files_and_digests(tmp_path, write_json, capsys):
    outs = [tmp_path / "one", tmp_path / "two"]
    for n, out in enumerate(outs):
        assert main(["simulate", str(write_json(f"cfg{n}.json", CONFIG)), "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split()[0] for ln in lines[:2]] == ["scenario.json", "predictions.jsonl"]
    assert all(len(ln.split()[1]) == 64 for ln in lines)
    assert lines[:2] == lines[2:]
    # the second run reproduces the files byte for byte
    for name in ("scenario.json", "predictions.jsonl"):
        assert _sha(outs[0] / name) == _sha(outs[1] / name)


def test_simulate_rejects_negative_sigma(tmp_path, write_json, capsys):
    bad = json.loads(json.dumps(CONFIG))
    bad["detector"]["localization_noise_sigma"] = -0.1
    code = main(["simulate", str(write_json("bad.json", bad)), "--out", str(tmp_path / "x")])
    assert code == 2
    assert "localization_noise_sigma" in capsys.readouterr().err


def test_evaluate_echoes_config_and_writes_plot_data(simulated, tmp_path):
    out = tmp_path / "ev"
    code = main([
        "evaluate", str(simulated / "scenario.json"), str(simulated / "predictions.jsonl"),
        "--out", str(out), "--adl", "0.75", "--tau-loc", "0.2", "--persistence", "2",
        "--iou-threshold", "0.4", "--adl-grid", "0,0.5,1", "--distractor-window", "1.0", "--plot-data",
    ])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["adl"] == 0.75
    assert report["config"]["tau_loc"] == 0.2
    assert report["config"]["persistence_frames"] == 2
    assert report["config"]["iou_threshold"] == 0.4
    assert report["config"]["adl_grid"] == [0.0, 0.5, 1.0]
    assert report["config"]["distractor_window"] == 1.0
    assert "generated_at" in report
    with (out / "latency_recall.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["adl", "compliance"] and len(rows) == 4
    assert (out / "latency_histogram.csv").exists() and (out / "pr_curve.csv").exists()


def test_evaluate_is_reproducible(simulated, tmp_path):
    texts = []
    for name in ("a", "b"):
        main(["evaluate", str(simulated / "scenario.json"), str(simulated / "predictions.jsonl"),
              "--out", str(tmp_path / name)])
        texts.append(strip_generated_at((tmp_path / name / "report.json").read_text()))
    assert texts[0] == texts[1]


def test_evaluate_bad_flag_value_exits_2(simulated, tmp_path):
    code = main(["evaluate", str(simulated / "scenario.json"), str(simulated / "predictions.jsonl"),
                 "--out", str(tmp_path / "e"), "--persistence", "0"])
    assert code == 2


def test_evaluate_missing_scenario_exits_2(tmp_path):
    missing = tmp_path / "none.json"
    assert main(["evaluate", str(missing), str(missing), "--out", str(tmp_path / "o")]) == 2


def test_compare_same_report_has_zero_deltas(simulated, tmp_path, capsys):
    main(["evaluate", str(simulated / "scenario.json"), str(simulated / "predictions.jsonl"),
          "--out", str(tmp_path / "r")])
    rep = str(tmp_path / "r" / "report.json")
    capsys.readouterr()
    assert main(["compare", rep, rep]) == 0
    out = capsys.readouterr().out
    assert "no legacy/doc disagreement" in out
    assert "better" not in out and "worse" not in out


def test_compare_digest_mismatch_exits_2(tmp_path, write_json, capsys):
    a = write_json("a.json", {"scenario_digest": "aaa"})
    b = write_json("b.json", {"scenario_digest": "bbb"})
    assert main(["compare", str(a), str(b)]) == 2
    assert "digest" in capsys.readouterr().err


def test_unknown_subcommand_exits_2():
    assert main(["frobnicate"]) == 2


def test_module_entry_point_exit_codes(tmp_path):
    run = subprocess.run([sys.executable, "-m", "doceval", "--help"], capture_output=True, text=True)
    assert run.returncode == 0 and "simulate" in run.stdout
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    run = subprocess.run([sys.executable, "-m", "doceval", "simulate", str(bad), "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert run.returncode == 2
