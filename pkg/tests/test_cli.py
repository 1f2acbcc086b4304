"""CLI surface: every subcommand exercised end to end on tiny inputs."""

import json

import numpy as np
import pytest
from PIL import Image

from crowdcount.cli import main
from crowdcount.density import load_density


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    main([
        "synth", "--n", "6", "--out", str(root / "train"), "--seed", "3",
        "--size", "64", "--min-count", "1", "--max-count", "5", "--write-density",
    ])
    main([
        "synth", "--n", "3", "--out", str(root / "val"), "--seed", "4",
        "--size", "64", "--min-count", "1", "--max-count", "5",
    ])
    (root / "cfg.yaml").write_text(
        f"""
train_dir: {root / 'train'}
val_dir: {root / 'val'}
out_dir: {root / 'run'}
epochs: 1
labeled_fraction: 0.4
batch_labeled: 2
batch_unlabeled: 2
model:
  channels: [8, 16]
  depths: [1, 1]
  state_dim: 4
augment:
  crop_size: 64
"""
    )
    main(["train", "--config", str(root / "cfg.yaml")])
    return root


def test_synth_output_layout(workspace):
    assert (workspace / "train" / "annotations.jsonl").is_file()
    images = sorted((workspace / "train" / "images").glob("*.png"))
    assert len(images) == 6
    assert len(list((workspace / "train" / "images").glob("*.dmap"))) == 6
    img = np.asarray(Image.open(images[0]))
    assert img.shape == (64, 64, 3)


def test_train_wrote_checkpoint_and_metrics(workspace):
    assert (workspace / "run" / "checkpoint.pt").is_file()
    lines = (workspace / "run" / "metrics.jsonl").read_text().splitlines()
    kinds = {json.loads(l)["kind"] for l in lines}
    assert {"step", "epoch"} <= kinds


def test_eval_and_dump(workspace, capsys):
    main([
        "eval", "--ckpt", str(workspace / "run" / "checkpoint.pt"),
        "--data", str(workspace / "val"), "--config", str(workspace / "cfg.yaml"),
        "--dump-dir", str(workspace / "dump"),
    ])
    out = capsys.readouterr().out
    assert "MAE" in out and "RMSE" in out
    dumped = sorted((workspace / "dump").glob("*.dmap"))
    assert len(dumped) == 3
    counts = json.loads((workspace / "dump" / "counts.json").read_text())
    dm = load_density(dumped[0])
    assert abs(dm.count - counts[0]["pred"]) <= 1e-3


def test_plot_renders_png(workspace):
    dmap = next((workspace / "train" / "images").glob("*.dmap"))
    out = workspace / "density.png"
    main(["plot", "--density", str(dmap), "--out", str(out)])
    assert out.is_file()
    img = np.asarray(Image.open(out))
    assert img.size > 0


def test_inpaint_preview_mock(workspace):
    image = next((workspace / "train" / "images").glob("*.png"))
    out = workspace / "preview"
    main([
        "inpaint-preview", "--image", str(image),
        "--ckpt", str(workspace / "run" / "checkpoint.pt"),
        "--config", str(workspace / "cfg.yaml"),
        "--backend", "mock", "--out", str(out), "--seed", "5",
    ])
    inpainted = np.asarray(Image.open(out / "inpainted.png"))
    mask = np.asarray(Image.open(out / "mask.png"))
    source = np.asarray(Image.open(image).convert("RGB"))
    keep = mask == 0
    assert np.array_equal(inpainted[keep], source[keep])


def test_bench_scan_reference(capsys):
    main(["bench-scan", "--backend", "reference", "--length", "128", "--repeats", "1"])
    out = capsys.readouterr().out
    assert "steps/s" in out
