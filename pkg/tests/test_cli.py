import shutil

import numpy as np
import pytest

from scanfuse.cli import main
from scanfuse.kitti_io import (
    parse_labels,
    parse_scan,
    write_class_map,
    write_labels,
    write_sequence,
)
from scanfuse.synthetic import ObjectSpec, SyntheticConfig, make_synthetic_sequence


@pytest.fixture()
def seq_dir(tmp_path):
    out = tmp_path / "seq"
    assert main(["make-synthetic", "--seed", "1", "--out", str(out)]) == 0
    return out


def test_unknown_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


@pytest.mark.parametrize(
    "command",
    [
        "inspect",
        "make-synthetic",
        "gen-instances",
        "fuse",
        "build-augdb",
        "loss-check",
        "train-toy",
        "eval-miou",
    ],
)
def test_every_subcommand_has_help(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out.lower()


def test_missing_required_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["fuse", "--scan", "0"])
    assert exc.value.code == 1


def test_inspect_scan(seq_dir, capsys):
    code = main(["inspect", str(seq_dir / "velodyne" / "000000.bin")])
    assert code == 0
    out = capsys.readouterr().out
    assert "points" in out
    assert "x: [" in out


def test_inspect_labels(seq_dir, capsys):
    code = main(["inspect", str(seq_dir / "labels" / "000000.label")])
    assert code == 0
    assert "class" in capsys.readouterr().out


def test_inspect_missing_file_is_data_error(tmp_path, capsys):
    assert main(["inspect", str(tmp_path / "nope.bin")]) == 2


def test_make_synthetic_is_seed_reproducible(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["make-synthetic", "--seed", "9", "--out", str(a)]) == 0
    assert main(["make-synthetic", "--seed", "9", "--out", str(b)]) == 0
    for rel in ["velodyne/000000.bin", "labels/000004.label", "poses.txt", "calib.txt"]:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_fuse_end_to_end(seq_dir, tmp_path, capsys):
    out = tmp_path / "fused"
    code = main(
        ["fuse", "--seq", str(seq_dir), "--scan", "4", "--window", "4", "--out", str(out)]
    )
    assert code == 0
    cloud = parse_scan((tmp_path / "fused.bin").read_bytes())
    labels = parse_labels((tmp_path / "fused.label").read_bytes())
    assert len(cloud) == len(labels)
    origins = (tmp_path / "fused.origins.txt").read_text().split()
    current = parse_scan((seq_dir / "velodyne" / "000004.bin").read_bytes())
    assert len(origins) == len(cloud) - len(current)
    assert all(-4 <= int(v) <= -1 for v in origins)


def test_fuse_missing_labels_is_data_error(seq_dir, capsys):
    shutil.rmtree(seq_dir / "labels")
    code = main(["fuse", "--seq", str(seq_dir), "--scan", "4", "--out", "x"])
    assert code == 2
    assert "labels" in capsys.readouterr().err.lower()


def test_fuse_scan_out_of_range_is_data_error(seq_dir, capsys):
    assert main(["fuse", "--seq", str(seq_dir), "--scan", "99", "--out", "x"]) == 2


def test_fuse_flags_override_config_file(seq_dir, tmp_path):
    cfg = tmp_path / "fusion.cfg"
    cfg.write_text("window = 3\n")
    out_a = tmp_path / "a"
    assert (
        main(
            ["fuse", "--seq", str(seq_dir), "--scan", "4", "--config", str(cfg), "--out", str(out_a)]
        )
        == 0
    )
    origins_a = {int(v) for v in (tmp_path / "a.origins.txt").read_text().split()}
    assert origins_a == {-1, -2, -3}

    out_b = tmp_path / "b"
    assert (
        main(
            [
                "fuse",
                "--seq",
                str(seq_dir),
                "--scan",
                "4",
                "--config",
                str(cfg),
                "--window",
                "2",
                "--out",
                str(out_b),
            ]
        )
        == 0
    )
    origins_b = {int(v) for v in (tmp_path / "b.origins.txt").read_text().split()}
    assert origins_b == {-1, -2}


def test_gen_instances_cli(tmp_path, capsys):
    config = SyntheticConfig(
        n_scans=1,
        ground_points=30,
        points_per_object=25,
        objects=[
            ObjectSpec(
                shape="cylinder",
                class_id=81,
                center=(6.0, 0.0, 0.8),
                size=(0.4, 1.2),
                instance_id=0,
            ),
            ObjectSpec(
                shape="cylinder",
                class_id=81,
                center=(-6.0, 3.0, 0.8),
                size=(0.4, 1.2),
                instance_id=0,
            ),
        ],
    )
    seq = make_synthetic_sequence(config, seed=3)
    write_sequence(seq.data, tmp_path / "seq")
    out = tmp_path / "updated.label"
    code = main(
        [
            "gen-instances",
            str(tmp_path / "seq" / "velodyne" / "000000.bin"),
            str(tmp_path / "seq" / "labels" / "000000.label"),
            "--class",
            "81",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    updated = parse_labels(out.read_bytes())
    sign_instances = set(np.unique(updated.instance[updated.semantic == 81]).tolist())
    assert sign_instances == {1, 2}


def test_build_augdb_cli(seq_dir, tmp_path, capsys):
    out = tmp_path / "augdb"
    code = main(["build-augdb", "--seq", str(seq_dir), "--out", str(out)])
    assert code == 0
    manifest = (out / "manifest.txt").read_text().splitlines()
    assert len(manifest) > 0
    # on-disk layout: one directory per entry with the four members
    first_dir = out / manifest[0].split()[-1]
    for member in ["single.bin", "single.label", "fused.bin", "fused.label"]:
        assert (first_dir / member).is_file()


def test_loss_check_cli(capsys):
    code = main(["loss-check", "--cases", "5", "--seed", "0"])
    assert code == 0
    out = capsys.readouterr().out
    assert "feature" in out and "logits" in out and "affinity" in out
    assert "FAIL" not in out


def test_loss_check_is_seed_reproducible(capsys):
    assert main(["loss-check", "--cases", "5", "--seed", "2"]) == 0
    first = capsys.readouterr().out
    assert main(["loss-check", "--cases", "5", "--seed", "2"]) == 0
    assert capsys.readouterr().out == first


def test_train_toy_cli(capsys):
    code = main(["train-toy", "--seed", "0", "--steps", "5", "--scans", "3"])
    assert code == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.strip()]
    assert any("total" in l for l in lines[:1])  # header row
    assert "mIoU" in out


def test_train_toy_is_seed_reproducible(capsys):
    assert main(["train-toy", "--seed", "4", "--steps", "3", "--scans", "3"]) == 0
    first = capsys.readouterr().out
    assert main(["train-toy", "--seed", "4", "--steps", "3", "--scans", "3"]) == 0
    second = capsys.readouterr().out
    assert first == second


def test_eval_miou_cli(tmp_path, capsys):
    gt_dir = tmp_path / "gt"
    pred_dir = tmp_path / "pred"
    gt_dir.mkdir()
    pred_dir.mkdir()
    from scanfuse.kitti_io import LabelSet

    gt = LabelSet(np.array([40, 40, 81, 81], dtype=np.uint16), np.zeros(4, dtype=np.uint16))
    pred = LabelSet(np.array([40, 81, 81, 81], dtype=np.uint16), np.zeros(4, dtype=np.uint16))
    (gt_dir / "000000.label").write_bytes(write_labels(gt))
    (pred_dir / "000000.label").write_bytes(write_labels(pred))
    classmap = tmp_path / "classes.txt"
    classmap.write_text(
        write_class_map({0: (-1, "unlabeled"), 40: (0, "road"), 81: (1, "traffic-sign")})
    )
    code = main(
        [
            "eval-miou",
            "--pred",
            str(pred_dir),
            "--gt",
            str(gt_dir),
            "--classmap",
            str(classmap),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    header, row = out.strip().splitlines()
    assert header.split()[1:] == ["road", "traffic-sign", "mIoU"]
    assert row.split()[1:] == ["50.0", "66.7", "58.3"]
