import json

import numpy as np
import pytest

from ialseg.cli import main


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One tiny gen-data -> train -> eval pipeline shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    scene = write_json(root / "scene.json", {
        "height": 16, "width": 32, "object_min_size": 2, "object_max_size": 5,
        "count": 12,
    })
    run = write_json(root / "run.json", {
        "optim": {"epochs": 2}, "batch_size": 6,
    })
    assert main(["gen-data", "--config", scene, "--seed", "3",
                 "--out", str(root / "data")]) == 0
    assert main(["gen-data", "--config", scene, "--seed", "3", "--stream", "1",
                 "--count", "6", "--out", str(root / "eval_data")]) == 0
    assert main(["train", "--config", run, "--data", str(root / "data"),
                 "--loss", "wce", "--seed", "5", "--out", str(root / "wce")]) == 0
    assert main(["train", "--config", run, "--data", str(root / "data"),
                 "--loss", "ial", "--seed", "5", "--out", str(root / "ial")]) == 0
    for name in ("wce", "ial"):
        assert main(["eval", "--checkpoint", str(root / name / "final.ckpt"),
                     "--data", str(root / "eval_data"), "--seed", "5",
                     "--out", str(root / f"{name}_eval")]) == 0
    return root


def test_gen_data_layout(workspace):
    data = workspace / "data"
    assert sorted(p.name for p in (data / "images").iterdir())[0] == "00000.ppm"
    assert len(list((data / "labels").iterdir())) == 12
    meta = json.loads((data / "meta.json").read_text())
    assert meta["count"] == 12
    run = json.loads((data / "run.json").read_text())
    assert run["command"] == "gen-data"
    assert run["seed"] == 3
    assert run["scene"]["height"] == 16


def test_train_artifacts_and_echo(workspace):
    out = workspace / "ial"
    assert (out / "loss.csv").exists()
    assert (out / "final.ckpt").exists()
    assert (out / "checkpoints" / "epoch_002.ckpt").exists()
    run = json.loads((out / "run.json").read_text())
    assert run["loss"]["loss"] == "ial"
    assert run["optim"]["epochs"] == 2
    assert run["net"]["variant"] == "erf"
    assert run["net"]["num_classes"] == 9
    assert run["seed"] == 5
    header = (out / "loss.csv").read_text().split("\n")[0]
    assert header == "epoch,lr,I_1,I_2,I_3,f_2,f_3,total"


def test_train_is_bytewise_repeatable(workspace, tmp_path):
    run = write_json(tmp_path / "run.json", {"optim": {"epochs": 2},
                                             "batch_size": 6})
    args = ["train", "--config", run, "--data", str(workspace / "data"),
            "--loss", "ial", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "again")]) == 0
    first = workspace / "ial"
    assert (tmp_path / "again" / "loss.csv").read_bytes() == \
        (first / "loss.csv").read_bytes()
    assert (tmp_path / "again" / "final.ckpt").read_bytes() == \
        (first / "final.ckpt").read_bytes()


def test_eval_reports(workspace):
    out = workspace / "ial_eval"
    doc = json.loads((out / "report.json").read_text())
    assert {c["name"] for c in doc["classes"]} >= {"sky", "road", "car"}
    assert set(doc["groups"]) == {"G1", "G2", "G3"}
    csv_lines = (out / "report.csv").read_text().strip().split("\n")
    assert len(csv_lines) == 10  # header + 9 classes


def test_eval_with_baseline_emits_deltas(workspace, tmp_path):
    assert main(["eval", "--checkpoint", str(workspace / "ial" / "final.ckpt"),
                 "--data", str(workspace / "eval_data"), "--seed", "5",
                 "--baseline", str(workspace / "wce_eval" / "report.json"),
                 "--out", str(tmp_path / "delta_eval")]) == 0
    doc = json.loads((tmp_path / "delta_eval" / "report.json").read_text())
    assert set(doc["deltas"]) == {"G1", "G2", "G3"}


def test_compare_verdict_lines(workspace, tmp_path, capsys):
    rc = main(["compare", str(workspace / "wce_eval" / "report.json"),
               str(workspace / "ial_eval" / "report.json"),
               "--out", str(tmp_path / "cmp")])
    assert rc == 0
    lines = capsys.readouterr().out.strip().split("\n")
    for g, line in zip((1, 2, 3), lines):
        assert line.startswith(f"G{g} recall: ")
        assert line.endswith(" points")
    doc = json.loads((tmp_path / "cmp" / "compare.json").read_text())
    got = float(lines[2].split(": ")[1].split(" ")[0])
    np.testing.assert_allclose(got, 100 * doc["deltas"]["G3"]["recall"], atol=0.05)


def test_grad_check_command(capsys):
    rc = main(["grad-check", "--seed", "0", "--loss-instances", "10"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "ial_gradient" in out
    assert "FAIL" not in out


def test_seed_is_mandatory(workspace, capsys):
    with pytest.raises(SystemExit):
        main(["train", "--data", str(workspace / "data"),
              "--out", "/tmp/should_not_exist"])
    capsys.readouterr()


def test_unreadable_dataset_fails_cleanly(tmp_path):
    with pytest.raises((SystemExit, FileNotFoundError, ValueError)):
        main(["train", "--data", str(tmp_path / "nope"), "--seed", "1",
              "--out", str(tmp_path / "out")])
