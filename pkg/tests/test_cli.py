import json
import shutil

import pytest

from dualprop import io
from dualprop.cli import demo_dir, main
from dualprop.pipeline import random_archive


@pytest.fixture(scope="module")
def seq_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "seq"
    assert main(["gen", "--frames", "5", "--height", "32", "--width", "48", "--velocity", "1", "0",
                 "--seed", "2", "--out-dir", str(d)]) == 0
    return d


def test_gen_layout(seq_dir):
    for sub in ("frames", "masks", "flows", "flows_gt"):
        assert (seq_dir / sub).is_dir()
    seq = io.read_sequence(seq_dir)
    assert seq["frames"].shape == (5, 32, 48, 3) and seq["masks"].any()
    assert not seq["flows_fwd"][seq["masks"][:-1]].any()


def test_inpaint_and_metrics(seq_dir, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["inpaint", str(seq_dir), "--out-dir", str(out)]) == 0
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["mode"] == "propagation-only"
    capsys.readouterr()
    assert main(["metrics", str(out), str(seq_dir), "--out-dir", str(tmp_path / "m")]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["psnr"] > 20 and 0 < result["ssim"] <= 1 and result["e_warp"] >= 0
    assert (tmp_path / "m" / "metrics.json").exists()


def test_propagate_and_complete_flow(seq_dir, tmp_path):
    assert main(["propagate", str(seq_dir), "--out-dir", str(tmp_path / "p")]) == 0
    events = json.loads((tmp_path / "p" / "diagnostics.json").read_text())["events"]
    assert all(e["max_error"] < 5 for e in events)
    assert main(["complete-flow", str(seq_dir), "--out-dir", str(tmp_path / "c")]) == 0
    assert len(list((tmp_path / "c" / "flows").glob("*.flo"))) == 8


def test_weighted_inpaint_with_archive(seq_dir, tmp_path):
    cfg_text = ("mode = weighted\nchannels = 8\ntoken_channels = 8\nheads = 2\n"
                "num_blocks = 1\nflow_channels = 8\nlocal_length = 3\nclip_length = 4\n")
    (tmp_path / "c.cfg").write_text(cfg_text)
    from dualprop.config import parse_config
    io.write_archive(tmp_path / "w.bin", random_archive(parse_config(cfg_text), seed=0))
    assert main(["inpaint", str(seq_dir), "--config", str(tmp_path / "c.cfg"),
                 "--weights", str(tmp_path / "w.bin"), "--out-dir", str(tmp_path / "o")]) == 0
    diag = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert diag["flow_completion"] == "rfc"


def test_cost_report_and_selftest(tmp_path, capsys):
    assert main(["cost-report", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "flops_vs_length.csv").exists()
    assert (tmp_path / "flops_vs_resolution.csv").exists()
    assert main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_exit_codes(seq_dir, tmp_path):
    bad = tmp_path / "bad"
    shutil.copytree(seq_dir, bad)
    flo = sorted((bad / "flows").glob("*.flo"))[0]
    flo.write_bytes(b"XXXX" + flo.read_bytes()[4:])
    assert main(["inpaint", str(bad), "--out-dir", str(tmp_path / "x")]) == 3
    (tmp_path / "c.cfg").write_text("mode = bogus\n")
    assert main(["inpaint", str(seq_dir), "--config", str(tmp_path / "c.cfg"),
                 "--out-dir", str(tmp_path / "x")]) == 4
    assert main(["inpaint", str(tmp_path / "missing"), "--out-dir", str(tmp_path / "x")]) == 2
    assert main(["inpaint", str(seq_dir), "--mode", "weighted",
                 "--out-dir", str(tmp_path / "x")]) == 2
    assert main(["inpaint", str(seq_dir)]) == 2


def test_demo_bundled():
    seq = io.read_sequence(demo_dir())
    assert seq["frames"].shape == (10, 64, 96, 3)
    assert seq["flows_fwd"] is not None and seq["masks"].any()
