import subprocess
import sys

import pytest

from objdiscover.cli import main, resolve_params, load_config_file
from objdiscover.io import load_boxes, load_manifest


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, seeds, disc, scored, rep = (root / n for n in ("data", "seeds", "disc", "scored", "report"))
    assert run("synth", "--out", data, "--scenes", 3, "--objects-max", 2) == 0
    assert run("ppscore", "--data", data) == 0
    assert run("seed", "--data", data, "--out", seeds) == 0
    assert run("discover", "--data", data, "--seeds", seeds, "--out", disc, "--iterations", 5) == 0
    assert run("score", "--data", data, "--boxes", disc, "--out", scored) == 0
    assert run("eval", "--data", data, "--pred", disc, "--out", rep) == 0
    return root


def test_pipeline_outputs(pipeline):
    scene_dirs = sorted(p.name for p in (pipeline / "data").iterdir() if p.is_dir())
    assert scene_dirs == ["scene_0000", "scene_0001", "scene_0002"]
    m = load_manifest(pipeline / "data" / "scene_0000" / "manifest.json")
    assert m.tau == "tau.bin"
    trace = (pipeline / "disc" / "scene_0000" / "trace.csv").read_text().splitlines()
    assert trace[0] == "iteration,kept,total_reward,mean_reward"
    recs = load_boxes(pipeline / "scored" / "scene_0000" / "boxes.jsonl")
    assert all(r.breakdown is not None and r.class_name for r in recs)
    assert (pipeline / "report" / "metrics.kv").read_text().startswith("ap_iou0.5_0-30m=")
    log = (pipeline / "disc" / "run.discover.log").read_text()
    assert "sigma = 0.3" in log and "iterations = 5" in log and "jobs" not in log


def test_help_exits_zero():
    out = subprocess.run([sys.executable, "-m", "objdiscover", "discover", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "--sigma" in out.stdout


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("discover", "--bogus")
    assert exc.value.code == 2
    assert run("seed", "--data", tmp_path / "missing", "--out", tmp_path / "o") == 2
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("not_a_key = 1\n")
    assert run("synth", "--out", tmp_path / "o", "--config", cfg) == 2


def test_ppscore_single_history(tmp_path, capsys):
    data = tmp_path / "d"
    assert run("synth", "--out", data, "--scenes", 1, "--traversals", 2) == 0
    m = data / "scene_0000" / "manifest.json"
    text = m.read_text().replace('"history_01.bin"', "").replace('"history_00.bin",', '"history_00.bin"')
    m.write_text(text)
    assert run("ppscore", "--data", data) == 1
    assert "T >= 2" in capsys.readouterr().err


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nsigma = 0.5\nsamples = 50\n")
    conf = load_config_file(cfg)
    p = resolve_params("discover", {"sigma": 0.7}, conf)
    assert p["sigma"] == 0.7  # flag beats file
    assert p["samples"] == 50  # file beats default
    assert p["topk"] == 75.0  # default
