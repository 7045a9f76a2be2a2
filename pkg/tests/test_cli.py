import json
import re

import numpy as np
import pytest

from mmnet import vtf
from mmnet.cli import main

SMALL = ["--dims", "4,12,12", "--n", "40"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_gen_is_byte_identical_and_counts(tmp_path, capsys):
    for name in ("a", "b"):
        code, _, _ = run(capsys, "gen", "--n", 40, "--seed", 7, "--dims", "6,16,16", "--out", tmp_path / name)
        assert code == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["n"] == len(manifest["samples"]) == 40


def test_gen_paper_shaped(tmp_path, capsys):
    code, _, _ = run(capsys, "gen", "--n", 8, "--split", "1:1", "--dims", "18,224,224", "--out", tmp_path)
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    vol = vtf.load(tmp_path / manifest["samples"][0]["files"][0])
    assert vol.shape == (1, 18, 224, 224)


def test_gen_rejects_unbalanced_n(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "--n", 7, "--out", tmp_path)
    assert code == 2 and "error" in err


def test_missing_dataset_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--data", tmp_path / "nope")
    assert code == 2 and "nope" in err


def test_eval_untrained_is_near_chance(capsys):
    accs = []
    for seed in range(3):
        code, out, _ = run(capsys, "eval", "--seed", seed)
        assert code == 0
        accs.append(json.loads(out)["accuracy"])
    assert all(0.1 <= a <= 0.45 for a in accs), accs


def test_train_eval_cam_roundtrip(tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "train", *SMALL, "--epochs", 2, "--seed", 3, "--out", out)
    assert code == 0
    summary = json.loads(stdout)
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2 and summary["best_epoch"] in (1, 2)
    assert (out / "checkpoint" / "manifest.json").is_file()

    code, stdout, _ = run(capsys, "eval", *SMALL, "--seed", 3, "--checkpoint", out / "checkpoint")
    assert code == 0
    assert json.loads(stdout)["accuracy"] == json.loads(lines[summary["best_epoch"] - 1])["val_accuracy"]

    cam_dir = tmp_path / "cam"
    code, stdout, _ = run(capsys, "cam", *SMALL, "--seed", 3, "--checkpoint", out / "checkpoint",
                          "--class", 2, "--out", cam_dir)
    assert code == 0
    for tag in ("a", "b"):
        m = vtf.load(cam_dir / f"cam_{tag}.vtf")
        assert m.shape == (4, 12, 12)
        assert m.min() >= 0 and m.max() <= 1
        pgm = (cam_dir / f"cam_{tag}_z00.pgm").read_bytes()
        assert pgm.startswith(b"P5\n12 12\n255\n") and len(pgm) == len(b"P5\n12 12\n255\n") + 144


def test_train_is_reproducible(tmp_path, capsys):
    logs = []
    for name in ("x", "y"):
        code, _, _ = run(capsys, "train", *SMALL, "--epochs", 1, "--seed", 5, "--out", tmp_path / name)
        assert code == 0
        rec = json.loads((tmp_path / name / "metrics.jsonl").read_text())
        rec.pop("seconds")
        logs.append(rec)
    assert logs[0] == logs[1]
    a = _tree(tmp_path / "x" / "checkpoint")
    b = _tree(tmp_path / "y" / "checkpoint")
    assert {k: v for k, v in a.items() if k.endswith(".vtf")} == {k: v for k, v in b.items() if k.endswith(".vtf")}


def test_cam_rejects_bad_class(capsys):
    code, _, err = run(capsys, "cam", *SMALL, "--class", 9, "--out", "/tmp/unused-cam")
    assert code == 2 and "--class" in err


def test_verify_fault_injection_names_the_check(tmp_path, capsys):
    code, out, err = run(capsys, "verify", "--fault", "conv", "--out", tmp_path)
    assert code == 1
    assert "conv_oracle" in err
    verdict = json.loads((tmp_path / "verify.json").read_text())
    failed = [c["name"] for c in verdict["checks"] if not c["passed"]]
    assert failed == ["conv_oracle"]


def test_archstat_tiny_and_compare(capsys):
    code, out, _ = run(capsys, "archstat", "--variant", "mmnet-tiny")
    assert code == 0
    assert json.loads(out.splitlines()[0])["total_params"] < 10**6
    code, out, _ = run(capsys, "archstat", "--variant", "mmnet34", "--compare", "resnet3d34",
                       "--dims", "18,224,224")
    assert code == 0
    head = json.loads(out.splitlines()[0])
    assert head["comparison"]["param_ratio"] <= 0.9
    assert "param ratio" in out


@pytest.mark.parametrize("body, line", [
    ('{\n  "name": "x",\n  "stages": [\n}\n', 4),
    ('{\n  "name": "x",\n  "num_classes": 1\n}\n', 3),
])
def test_invalid_spec_file_is_line_anchored(tmp_path, capsys, body, line):
    from mmnet.model import get_variant
    if "num_classes" in body:
        d = get_variant("mmnet-tiny").to_dict()
        d["num_classes"] = 1
        body = json.dumps(d, indent=2)
        line = 1 + next(i for i, l in enumerate(body.splitlines()) if '"num_classes"' in l)
    path = tmp_path / "spec.json"
    path.write_text(body)
    code, _, err = run(capsys, "archstat", "--spec-file", path)
    assert code == 2
    assert re.search(rf"spec\.json:{line}:\d+:", err), err


def test_threads_flag_is_accepted(capsys):
    code, _, _ = run(capsys, "--threads", 1, "archstat", "--variant", "mmnet-tiny")
    assert code == 0
