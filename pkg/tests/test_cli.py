import argparse
import json
import subprocess
import sys

import numpy as np
import pytest

from hyphanet.cli import main, parse_range, parse_scale
from hyphanet.io import load_volume, read_pgm, save_volume
from hyphanet.volume import Volume

CONFIG = json.dumps({"dims": [64, 64, 16], "max_branch_length": 40})


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert run("generate", "--seed", 7, "--config", CONFIG, "--out-dir", out) == 0
    return out


def test_parse_range():
    assert parse_range("2:20:2") == [2, 4, 6, 8, 10, 12, 14, 16, 18, 20]
    assert parse_range("1:10") == list(range(1, 11))
    assert parse_range("1:6:2") == [1, 3, 5]
    assert parse_range("0.5:1.5:0.5") == [0.5, 1.0, 1.5]
    assert parse_range("3") == [3] and parse_range("1,4,2.5") == [1, 4, 2.5]
    for bad in ("a:b", "5:1:1", "1:5:0", "1:2:3:4", "", ","):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_range(bad)


def test_parse_scale():
    assert parse_scale("1,1,2.5") == (1.0, 1.0, 2.5)
    for bad in ("1,x,1", "1,0,1", "-1"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_scale(bad)


def test_generate_outputs(generated):
    files = sorted(p.name for p in generated.iterdir())
    assert files == ["generate.json", "gt.raw", "gt.raw.json", "stack.raw", "stack.raw.json", "trees.json"]
    stack, gt = load_volume(generated / "stack.raw"), load_volume(generated / "gt.raw")
    assert stack.data.shape == gt.data.shape == (64, 64, 16)
    assert stack.kind == "gray" and gt.kind == "binary"
    doc = json.loads((generated / "generate.json").read_text())
    assert doc["seed"] == 7 and doc["config"]["dims"] == [64, 64, 16] and "p_branch" in doc["config"]
    assert doc["noxels"] == int(gt.data.sum())


def test_generate_twice_is_byte_identical(generated, tmp_path):
    assert run("--threads", 1, "generate", "--seed", 7, "--config", CONFIG, "--out-dir", tmp_path) == 0
    for f in generated.iterdir():
        assert (tmp_path / f.name).read_bytes() == f.read_bytes(), f.name


def test_score_identical_masks(generated, capsys):
    assert run("score", "--pred", generated / "gt.raw", "--gt", generated / "gt.raw") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["metrics"]["f1"] == 1.0


def test_segment_methods(generated, tmp_path):
    rep = tmp_path / "frangi.json"
    assert run("segment", "--method", "frangi", "--params", '{"scales": [1.0, 1.5]}', "--in", generated / "stack.raw",
               "--out", tmp_path / "v.raw", "--gt", generated / "gt.raw", "--report", rep) == 0
    doc = json.loads(rep.read_text())
    assert doc["params"]["scales"] == [1.0, 1.5] and "alpha" in doc["params"]
    assert 0 < doc["metrics"]["f1"] <= 1 and "optimal_threshold" in doc
    assert load_volume(tmp_path / "v.raw").kind == "gray"

    assert run("segment", "--method", "phansalkar", "--in", generated / "stack.raw", "--out", tmp_path / "p.raw",
               "--gt", generated / "gt.raw", "--report", tmp_path / "p.json") == 0
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["params"]["radius"] == 15 and doc["metrics"]["recall"] > 0.9

    assert run("segment", "--method", "threshold", "--params", '{"t": 0.5}', "--in", generated / "stack.raw",
               "--out", tmp_path / "t.raw") == 0
    stack = load_volume(generated / "stack.raw").data
    np.testing.assert_array_equal(load_volume(tmp_path / "t.raw").data, (stack > 0.5).astype(np.uint8))
    assert run("segment", "--method", "threshold", "--params", '{"q": 1}', "--in", generated / "stack.raw",
               "--out", tmp_path / "t.raw") == 1


def _gapped(tmp_path):
    skel = np.zeros((20, 8, 4), dtype=np.uint8)
    skel[2:8, 3, 1] = 1
    skel[11:17, 3, 1] = 1
    save_volume(Volume(skel, kind="binary"), tmp_path / "s.raw")
    return tmp_path / "s.raw"


def test_close_gaps_and_report(tmp_path):
    src = _gapped(tmp_path)
    assert run("close-gaps", "--in", src, "--out", tmp_path / "o.raw", "--max-gap", 3, "--scale", "1,1,1",
               "--report", tmp_path / "r.json") == 0
    assert json.loads((tmp_path / "r.json").read_text())["edges_added"] == []
    assert run("close-gaps", "--in", src, "--out", tmp_path / "o.raw", "--max-gap", 5, "--report", tmp_path / "r.json") == 0
    out = load_volume(tmp_path / "o.raw").data
    assert out[2:17, 3, 1].all() and out.sum() == 15
    doc = json.loads((tmp_path / "r.json").read_text())
    assert len(doc["edges_added"]) == 1 and doc["config"]["max_gap"] == 5.0
    assert run("close-gaps", "--in", src, "--out", tmp_path / "g.raw", "--max-gap", 5, "--distance", "geodesic") == 0


def test_features_outputs(tmp_path):
    src = _gapped(tmp_path)
    assert run("features", "--in", src, "--out", tmp_path / "f.csv") == 0
    assert len((tmp_path / "f.csv").read_text().strip().splitlines()) == 3
    assert run("features", "--in", src, "--scale", "1,1,2", "--out", tmp_path / "f.json") == 0
    assert json.loads((tmp_path / "f.json").read_text())["totals"]["networks"] == 2
    assert run("features", "--in", src, "--out", tmp_path / "f.txt") == 1


def test_sweep_from_tree_dir_and_seeds(generated, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("--threads", 1, "sweep", "--trees", generated, "--l", "2:10:4", "--sz", "1:3", "--out", a) == 0
    assert run("--threads", 4, "sweep", "--trees", generated, "--l", "2:10:4", "--sz", "1:3", "--out", b) == 0
    for name in ("f1.csv", "precision.csv", "recall.csv", "surface.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    doc = json.loads((a / "surface.json").read_text())
    assert doc["l_values"] == [2, 6, 10] and doc["sources"] == ["trees.json"]
    assert run("sweep", "--config", CONFIG, "--seeds", "0:1", "--l", "4", "--sz", "1", "--out", tmp_path / "c") == 0
    assert json.loads((tmp_path / "c" / "surface.json").read_text())["synthesis_config"]["dims"] == [64, 64, 16]


def test_export_slices(generated, tmp_path):
    assert run("export-slices", "--in", generated / "stack.raw", "--out-dir", tmp_path, "--z", "0,15") == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["slice_00.pgm", "slice_15.pgm"]
    img = read_pgm(tmp_path / "slice_15.pgm")
    ref = load_volume(generated / "stack.raw").data[:, :, 15]
    np.testing.assert_allclose(img, np.round(np.clip(ref, 0, 1) * 255) / 255, atol=1e-12)
    assert run("export-slices", "--in", generated / "stack.raw", "--out-dir", tmp_path, "--z", "16") == 1


def test_errors_exit_nonzero(generated, tmp_path, capsys):
    big = Volume(np.zeros((3, 3, 3), dtype=np.uint8), kind="binary")
    save_volume(big, tmp_path / "small.raw")
    assert run("score", "--pred", tmp_path / "small.raw", "--gt", generated / "gt.raw") == 1
    assert "incompatible dims" in capsys.readouterr().err
    assert run("score", "--pred", tmp_path / "missing.raw", "--gt", generated / "gt.raw") == 1
    assert run("generate", "--seed", 1, "--config", '{"dims": [4, 4]}', "--out-dir", tmp_path / "x") == 1
    assert run("generate", "--seed", 1, "--config", "{not json", "--out-dir", tmp_path / "x") == 1
    for argv in (["sweep", "--trees", generated, "--l", "5:1", "--sz", "1", "--out", tmp_path],
                 ["close-gaps", "--bogus"], ["nonsense"]):
        with pytest.raises(SystemExit) as exc:
            run(*argv)
        assert exc.value.code != 0


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hyphanet", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("hyphanet ")
