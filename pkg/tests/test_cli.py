import json

import pytest

from qseg.cli import main


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["-q", "gen-data", "--out", str(d / "tr.qsd"), "--n-samples", "16"]) == 0
    assert main(["-q", "gen-data", "--out", str(d / "va.qsd"), "--n-samples", "4",
                 "--seed", "1"]) == 0
    return d


def test_train_eval_profile(files, capsys):
    d = files
    cfgfile = d / "c.cfg"
    cfgfile.write_text(f"dataset = {d / 'tr.qsd'}\nsteps = 50\nnetwork = toy_fcn\n")
    code = main(["-q", "train", "--config", str(cfgfile), "--steps", "4", "--k_U", "16",
                 "--val_dataset", str(d / "va.qsd"), "--out-dir", str(d / "t")])
    assert code == 0
    resolved = (d / "t" / "config.resolved").read_text()
    assert "steps = 4" in resolved and "k_U = 16" in resolved and "network = toy_fcn" in resolved
    for f in ("run.csv", "eval.csv", "checkpoint.qck", "loss.png", "grad_scales.png"):
        assert (d / "t" / f).exists()
    assert len((d / "t" / "run.csv").read_text().splitlines()) == 5
    capsys.readouterr()
    assert main(["-q", "eval", "--checkpoint", str(d / "t" / "checkpoint.qck"),
                 "--dataset", str(d / "va.qsd")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert 0 <= res["miou"] <= 1 and len(res["iou"]) == 4
    assert main(["-q", "profile", "--checkpoint", str(d / "t" / "checkpoint.qck"),
                 "--dataset", str(d / "tr.qsd"), "--objects", "W,G",
                 "--out-dir", str(d / "p")]) == 0
    assert (d / "p" / "hist_W_enc1.json").exists() and (d / "p" / "hist_G_up8.png").exists()
    assert (d / "p" / "profile.csv").exists()


def test_rerun_from_resolved_config_is_identical(files):
    d = files
    args = ["-q", "train", "--dataset", str(d / "tr.qsd"), "--steps", "3", "--seed", "4"]
    assert main(args + ["--out-dir", str(d / "r1")]) == 0
    assert main(["-q", "train", "--config", str(d / "r1" / "config.resolved"),
                 "--out-dir", str(d / "r2")]) == 0
    for f in ("run.csv", "checkpoint.qck"):
        assert (d / "r1" / f).read_bytes() == (d / "r2" / f).read_bytes()


def test_sweep_commands(files):
    d = files
    base = ["--dataset", str(d / "tr.qsd"), "--steps", "2", "--seeds", "0"]
    assert main(["-q", "sweep-ku", *base, "--values", "24,9", "--out-dir", str(d / "ku")]) == 0
    lines = (d / "ku" / "sweep_ku_summary.csv").read_text().splitlines()
    assert lines[0].startswith("k_U,mean_miou") and len(lines) == 3
    assert (d / "ku" / "sweep_ku.png").exists()
    assert main(["-q", "sweep-scaling", *base, "--out-dir", str(d / "sc")]) == 0
    assert len((d / "sc" / "sweep_scaling.csv").read_text().splitlines()) == 5
    assert main(["-q", "sweep-structure", *base, "--out-dir", str(d / "st")]) == 0
    assert "network = toy_fcn" in (
        d / "st" / "runs" / "encoder-quantized_decoder-quantized_seed-0" / "config.resolved").read_text()


def test_exit_codes(files):
    d = files
    assert main(["-q", "train", "--dataset", str(d / "tr.qsd"), "--steps", "5",
                 "--divergence_factor", "1e-6", "--divergence_patience", "1",
                 "--out-dir", str(d / "div")]) == 2
    assert (d / "div" / "run.csv").exists()
    assert main(["-q", "train", "--steps", "1"]) == 1
    assert main(["-q", "train", "--dataset", str(d / "missing.qsd")]) == 1
    assert main(["-q", "train", "--dataset", str(d / "tr.qsd"), "--network", "vgg"]) == 1
    assert main(["-q", "eval", "--checkpoint", str(d / "tr.qsd"), "--dataset", str(d / "tr.qsd")]) == 1
    with pytest.raises(SystemExit) as e:
        main(["train", "--no-such-flag"])
    assert e.value.code == 1
