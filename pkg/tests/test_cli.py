import csv

import numpy as np
import pytest
import torch
import yaml

from dggan.cli import main, run
from dggan.dataio.io import read_depth16, read_rgb
from dggan.evaluation import read_report
from dggan.trainer import load_checkpoint

from conftest import tiny_config_dict


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-fixtures", "--count", "8", "--eval-count", "4", "--seed", "7", "--image-size", "32",
                 "--out", str(root / "data")]) == 0
    cfg = tiny_config_dict()
    cfg["data"] = {"train_root": "data"}
    cfg["train"]["out_dir"] = "run"
    (root / "c.yaml").write_text(yaml.safe_dump(cfg))
    return root


def test_gen_fixtures_writes_records(workspace):
    assert len(list((workspace / "data" / "rgb").glob("*.png"))) == 12


def test_joint_without_init_names_missing_checkpoint(workspace, capsys, tmp_path):
    code = main(["train", "--config", str(workspace / "c.yaml"), "--phase", "joint", "--out-dir", str(tmp_path)])
    assert code == 1
    assert "init_pose.npz" in capsys.readouterr().err


def test_usage_and_config_errors(workspace, capsys, tmp_path):
    assert main(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"train": {"batch_size": "eight"}}))
    assert main(["train", "--config", str(bad)]) == 2
    assert "train.batch_size" in capsys.readouterr().err
    assert main(["eval"]) == 2  # no --config and no environment fallback


def test_train_eval_infer_pipeline(workspace, monkeypatch):
    cfg_path = str(workspace / "c.yaml")
    for phase in ("init-pose", "init-gan", "joint"):
        res = run(["train", "--config", cfg_path, "--phase", phase])
        assert res.exit_code == 0, phase
    run_dir = workspace / "run"
    assert {p.name for p in run_dir.glob("*.npz")} >= {"init_pose.npz", "init_gan.npz", "joint.npz"}
    with open(run_dir / "train_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["phase"] for r in rows].count("joint") == 5

    monkeypatch.setenv("DGGAN_CONFIG", cfg_path)
    res = run(["eval", "--split", "eval"])
    assert res.exit_code == 0
    report = read_report(run_dir / "eval_eval")
    assert report.n + report.excluded == 4
    assert (run_dir / "eval_eval" / "pck_curve.png").exists()
    assert (run_dir / "eval_eval" / "predictions.csv").exists()

    image = workspace / "data" / "rgb" / "000000.png"
    out = workspace / "pred"
    assert main(["infer", "--image", str(image), "--out", str(out)]) == 0
    with open(out / "keypoints.csv") as fh:
        kp = list(csv.DictReader(fh))
    assert len(kp) == 21
    state = load_checkpoint(run_dir / "joint.npz")
    state.generator.eval()
    x = torch.tensor(read_rgb(image).transpose(2, 0, 1)[None], dtype=torch.float32)
    with torch.no_grad():
        expected = state.generator(x)[0, 0].numpy().astype(np.float64)
    back = read_depth16(out / "depth.png") / 65535.0
    assert np.abs(back - expected).max() <= 1 / 65535


def test_seeded_runs_are_deterministic(workspace, tmp_path):
    cfg_path = str(workspace / "c.yaml")
    summaries = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", cfg_path, "--phase", "all", "--seed", "5", "--out-dir", str(out)]) == 0
        assert main(["eval", "--config", cfg_path, "--checkpoint", str(out / "joint.npz"), "--split", "eval",
                     "--out", str(out / "report"), "--no-figure"]) == 0
        summaries.append(((out / "report" / "summary.csv").read_bytes(),
                          (out / "report" / "pck_curve.csv").read_bytes(),
                          (out / "train_log.csv").read_bytes()))
    assert summaries[0] == summaries[1]
