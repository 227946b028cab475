import csv
import json

import numpy as np
import pytest

from dualmesh import shapes
from dualmesh.cli import main
from dualmesh.mesh import load_labels, load_mesh, load_mesh_colors, save_labels, save_mesh


@pytest.fixture
def ico2(tmp_path):
    path = tmp_path / "ico2.off"
    save_mesh(shapes.icosphere(2), path)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_version_and_help(capsys):
    code, out, _ = run(capsys, "--version")
    assert code == 0 and "0.1.0" in out
    code, out, _ = run(capsys, "train", "--help")
    assert code == 0
    for flag in ("--task", "--manifest", "--op", "--features", "--epochs", "--lr", "--layers",
                 "--no-bias", "--seed", "--jobs", "--config"):
        assert flag in out


@pytest.mark.parametrize("argv", [
    [], ["frobnicate"], ["dualize"], ["dualize", "x.off", "--bogus"], ["decimate", "a", "b"],
    ["train", "--task", "icosphere-selfcorr", "--manifest", "m.txt"],
    ["train", "--task", "no-such-task"], ["selftest", "--jobs", "0"],
])
def test_usage_errors_exit_1(capsys, argv):
    assert run(capsys, *argv)[0] == 1


def test_dualize(capsys, tmp_path, ico2):
    code, out, _ = run(capsys, "dualize", ico2, "--dump", tmp_path / "d.txt")
    assert code == 0 and "320 nodes, 3-regular: true" in out
    lines = (tmp_path / "d.txt").read_text().splitlines()
    assert len(lines) == 320 and lines[0].startswith("0: ")


def test_missing_and_malformed_files_exit_2(capsys, tmp_path):
    assert run(capsys, "dualize", tmp_path / "nope.off")[0] == 2
    bad = tmp_path / "bad.off"
    bad.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1\n3 0 1 2\n")
    code, _, err = run(capsys, "dualize", bad)
    assert code == 2 and "bad.off:5" in err


def test_features_csv(capsys, tmp_path, ico2):
    out = tmp_path / "f.csv"
    assert run(capsys, "features", ico2, "--features", "xyz,normal,dihedral", "--out", out)[0] == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["x", "y", "z", "nx", "ny", "nz", "dihedral_0", "dihedral_1", "dihedral_2"]
    assert len(rows) == 321
    assert run(capsys, "features", ico2, "--features", "colour")[0] == 2


def test_decimate_with_labels_and_trace(capsys, tmp_path, ico2):
    save_labels(np.arange(162), tmp_path / "in.labels")
    code, out, _ = run(capsys, "decimate", "--fraction", "0.5", ico2, tmp_path / "out.off",
                       "--labels", tmp_path / "in.labels", tmp_path / "out.labels",
                       "--trace", tmp_path / "trace.csv")
    assert code == 0 and "320 -> 160 faces" in out
    m = load_mesh(tmp_path / "out.off")
    labels = load_labels(tmp_path / "out.labels")
    assert len(labels) == m.n_vertices == 82
    trace = list(csv.DictReader((tmp_path / "trace.csv").open()))
    assert len(trace) == 80 and trace[0]["step"] == "0"
    assert run(capsys, "decimate", "--fraction", "0", ico2, tmp_path / "x.off")[0] == 1


def test_train_predict_eval_pipeline(capsys, tmp_path, ico2):
    out = tmp_path / "run"
    code, _, _ = run(capsys, "train", "--task", "icosphere-selfcorr", "--epochs", "3",
                     "--out", out, "--seed", "5")
    assert code == 0
    for name in ("model.ckpt", "log.csv", "config.txt"):
        assert (out / name).is_file()
    cfg = (out / "config.txt").read_text()
    assert "seed = 5" in cfg and "epochs = 3" in cfg
    log = list(csv.DictReader((out / "log.csv").open()))
    assert [r["epoch"] for r in log] == ["0", "1", "2", "3"]

    pred = tmp_path / "pred.labels"
    code, _, _ = run(capsys, "predict", ico2, "--model", out / "model.ckpt", "--out", pred,
                     "--probs", tmp_path / "p.npy")
    assert code == 0
    assert np.load(tmp_path / "p.npy").shape == (162, 162)
    assert run(capsys, "predict", ico2, "--model", out / "model.ckpt", "--out", pred,
               "--features", "xyz,normal")[0] == 2

    gt = tmp_path / "gt.labels"
    save_labels(np.arange(162), gt)
    code, stdout, _ = run(capsys, "eval", "--pred", gt, "--gt", gt, "--ref", ico2,
                          "--out", tmp_path / "ev", "--color-out", tmp_path / "c.off")
    assert code == 0 and json.loads(stdout)["accuracy"] == 1.0
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert metrics["mean_geo_error"] == 0.0
    colors = load_mesh_colors(tmp_path / "c.off")
    assert np.all(colors[:, :3] == 255)

    code, _, _ = run(capsys, "eval", "--pred", pred, "--gt", gt, "--ref", ico2,
                     "--out", tmp_path / "ev2", "--radii", "0,0.1,0.5")
    assert code == 0
    assert len((tmp_path / "ev2" / "curve.csv").read_text().splitlines()) == 4


def test_seed_gives_identical_artifacts(capsys, tmp_path):
    for name in ("a", "b"):
        assert run(capsys, "train", "--task", "icosphere-selfcorr", "--epochs", "2",
                   "--seed", "9", "--out", tmp_path / name)[0] == 0
    for f in ("log.csv", "model.ckpt", "config.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_config_file_precedence(capsys, tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("# settings\nepochs = 4\nlr = 0.01\nop = dualconvinv\n"
                    "layers = linear:8,conv:8,dual2primal,linear:N_T\n")
    out = tmp_path / "run"
    assert run(capsys, "train", "--task", "icosphere-selfcorr", "--config", conf,
               "--epochs", "1", "--out", out)[0] == 0
    cfg = (out / "config.txt").read_text()
    assert "epochs = 1" in cfg and "lr = 0.01" in cfg and "operator = dualconvinv" in cfg
    assert "linear:162" in cfg
    conf.write_text("momentum = 0.9\n")
    assert run(capsys, "train", "--task", "icosphere-selfcorr", "--config", conf,
               "--out", out)[0] == 1
    conf.write_text("layers = linear:8,linear:3\n")
    assert run(capsys, "train", "--task", "icosphere-selfcorr", "--config", conf,
               "--out", out)[0] == 1


def test_train_from_manifest(capsys, tmp_path):
    ref = shapes.icosphere(1)
    save_mesh(ref, tmp_path / "ref.off")
    save_labels(np.arange(42), tmp_path / "ref.labels")
    (tmp_path / "m.txt").write_text("reference ref.off\ntrain ref.off ref.labels\n")
    assert run(capsys, "train", "--manifest", tmp_path / "m.txt", "--epochs", "1",
               "--op", "meanconv", "--out", tmp_path / "o")[0] == 0
    (tmp_path / "m.txt").write_text("train ref.off\n")
    assert run(capsys, "train", "--manifest", tmp_path / "m.txt", "--out", tmp_path / "o")[0] == 2
