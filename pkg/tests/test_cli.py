import json
import subprocess
import sys

import numpy as np
import pytest

from morphflow.cli import build_parser, main
from morphflow.volume import load_field, load_volume

FAST = ["--warps", "2", "--iters", "5"]


@pytest.fixture(scope="module")
def pair(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    prefix = str(d / "g")
    assert main(["synth", "--preset", "grains32", "--seed", "3", "--shift", "1", "0", "0",
                 "--out-prefix", prefix]) == 0
    return prefix


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_synth_outputs(pair):
    fixed = load_volume(pair + "_fixed.raw")
    assert fixed.lattice.extents == (32, 32, 32) and fixed.data.dtype == np.float32
    truth = load_field(pair + "_truth")
    assert np.all(truth.u == 1.0)
    spec = read_json(pair + "_spec.json")
    assert spec["phantom"]["seed"] == 3 and "Translate" in spec["deformation"]
    report = read_json(pair + "_report.json")
    assert report["command"] == "synth" and report["seconds"] is None


def test_synth_deterministic(tmp_path, monkeypatch):
    # same relative prefix in two directories, so even the reports must match
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        monkeypatch.chdir(tmp_path / name)
        assert main(["synth", "--preset", "crack32", "--seed", "7", "--crack-open", "2",
                     "--out-prefix", "c"]) == 0
    for suffix in ("_fixed.raw", "_moving.raw", "_truth_w.raw", "_spec.json", "_report.json"):
        assert (tmp_path / "a" / f"c{suffix}").read_bytes() == \
            (tmp_path / "b" / f"c{suffix}").read_bytes()


def test_flow_and_report(pair, tmp_path):
    out = str(tmp_path / "flow")
    code = main(["flow", "--fixed", pair + "_fixed.raw", "--moving", pair + "_moving.raw",
                 "--l-start", "3", *FAST, "--out-prefix", out])
    assert code == 0
    u = load_field(out)
    assert u.lattice.extents == (32, 32, 32)
    rep = read_json(out + "_report.json")
    assert [lv["level"] for lv in rep["levels"]] == [3, 2, 1, 0]
    assert rep["results"]["rmse_warped"] < rep["results"]["rmse_initial"]
    assert len(rep["inputs"]) == 2 and all(len(h) == 64 for h in rep["inputs"].values())
    assert rep["parameters"]["prolongation"] == "midrange"


def test_flow_baseline(pair, tmp_path):
    out = str(tmp_path / "haar")
    assert main(["flow", "--fixed", pair + "_fixed.raw", "--moving", pair + "_moving.raw",
                 "--l-start", "3", "--pyramid", "haar", *FAST, "--out-prefix", out]) == 0
    assert [lv["level"] for lv in read_json(out + "_report.json")["levels"]] == [3, 0]


def test_flow_defaults():
    args = build_parser().parse_args(["flow", "--fixed", "a", "--moving", "b", "--out-prefix", "o"])
    assert (args.tau, args.lam, args.theta, args.iters, args.warps) == (0.25, 25.0, 0.2, 30, 20)
    assert (args.l_start, args.l_end, args.mode, args.pyramid) == (12, 0, "min", "morph")


def test_config_file_and_flag_precedence(pair, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"l-start": 3, "warps": 2, "iters": 5, "lambda": 10.0}))
    out = str(tmp_path / "c")
    assert main(["flow", "--config", str(cfg), "--fixed", pair + "_fixed.raw",
                 "--moving", pair + "_moving.raw", "--iters", "4", "--out-prefix", out]) == 0
    params = read_json(out + "_report.json")["parameters"]
    assert params["lam"] == 10.0 and params["l_start"] == 3 and params["iters"] == 4


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["metrics", "--config", str(cfg), "--a", "x", "--b", "y"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_metrics_identical(pair, capsys):
    assert main(["metrics", "--a", pair + "_fixed.raw", "--b", pair + "_fixed.raw"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["rmse"] == 0.0 and res["ssim"] == 1.0 and res["ml_ssim"] == 1.0


def test_metrics_with_truth_field(pair, tmp_path, capsys):
    out = tmp_path / "res.raw"
    assert main(["metrics", "--a", pair + "_fixed.raw", "--b", pair + "_moving.raw",
                 "--field", pair + "_truth", "--residual-out", str(out)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["residual"]["mean"] < 0.01
    assert load_volume(out).lattice.extents == (32, 32, 32)


def test_metrics_headerless_raw(tmp_path, capsys):
    data = np.arange(27, dtype=np.uint8).reshape(3, 3, 3)
    path = tmp_path / "plain.raw"
    path.write_bytes(data.tobytes(order="F"))
    code = main(["metrics", "--a", str(path), "--b", str(path), "--shape", "3", "3", "3",
                 "--window", "3", "--levels-m", "1"])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["rmse"] == 0.0


def test_headerless_without_shape(tmp_path, capsys):
    path = tmp_path / "plain.raw"
    path.write_bytes(b"\0" * 8)
    assert main(["metrics", "--a", str(path), "--b", str(path)]) == 2
    assert "--shape" in capsys.readouterr().err


def test_strain(pair, tmp_path):
    out = str(tmp_path / "s")
    assert main(["strain", "--field", pair + "_truth", "--out-prefix", out]) == 0
    e33 = load_volume(out + "_e33.raw")
    assert not e33.data.any()
    pgm = (tmp_path / "s_e33_y016.pgm").read_bytes()
    assert pgm.startswith(b"P5\n32 32\n255\n") and len(pgm) == len(b"P5\n32 32\n255\n") + 32 * 32


def test_decompose(pair, tmp_path):
    out = str(tmp_path / "d")
    assert main(["decompose", "--input", pair + "_fixed.raw", "--levels", "3",
                 "--out-prefix", out]) == 0
    manifest = read_json(out + "_manifest.json")
    assert [lv["lattice"]["kind"] for lv in manifest["levels"]] == \
        ["cartesian", "fcc", "tilted_cuboid", "cartesian"]
    assert load_volume(out + "_level03.raw").lattice.extents == (16, 16, 16)


def test_scanline(pair, tmp_path, capsys):
    assert main(["scanline", "--input", pair + "_fixed.raw", "--axis", "z",
                 "--slice", "4", "--line", "5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "coordinate,value" and len(lines) == 33
    out = tmp_path / "line.csv"
    assert main(["scanline", "--input", pair + "_fixed.raw", "--out", str(out)]) == 0
    assert out.read_text().count("\n") == 33


def test_invalid_level_exit_code(pair, tmp_path, capsys):
    code = main(["flow", "--fixed", pair + "_fixed.raw", "--moving", pair + "_moving.raw",
                 "--l-start", "4", "--out-prefix", str(tmp_path / "x")])
    assert code == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("error:") and "\n" not in err


def test_unknown_flag_exit_code(capsys):
    assert main(["metrics", "--nope"]) == 2
    assert "usage" in capsys.readouterr().err


def test_threads_flag(pair, capsys, monkeypatch):
    assert main(["metrics", "--a", pair + "_fixed.raw", "--b", pair + "_fixed.raw",
                 "--threads", "1"]) == 0
    monkeypatch.setenv("MORPHFLOW_THREADS", "zero")
    capsys.readouterr()
    assert main(["metrics", "--a", pair + "_fixed.raw", "--b", pair + "_fixed.raw"]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "morphflow", "--help"], capture_output=True,
                         text=True, check=False)
    assert res.returncode == 0
    for name in ("synth", "decompose", "flow", "metrics", "strain", "scanline"):
        assert name in res.stdout
