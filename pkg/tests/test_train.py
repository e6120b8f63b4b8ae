import math

import numpy as np
import pytest

from qseg.checkpoint import load_checkpoint
from qseg.config import ExperimentConfig
from qseg.data import generate_shapes
from qseg.network import build_network
from qseg.train import RUN_COLUMNS, DivergenceError, evaluate, prepare_network, train


@pytest.fixture(scope="module")
def data():
    return generate_shapes(100, 120, 64, 4), generate_shapes(200, 30, 64, 4)


def test_zero_steps_checkpoint_is_initialization(data, tmp_path):
    cfg = ExperimentConfig(steps=0, seed=5)
    train(cfg, *data, out_dir=tmp_path)
    net, _, extra = load_checkpoint(tmp_path / "checkpoint.qck")
    ref, _ = prepare_network(cfg, 4)
    assert extra == {"seed": 5, "steps": 0}
    for name, layer in ref.layers.items():
        np.testing.assert_array_equal(net.layers[name].weights, layer.weights)


def test_run_files_and_determinism(data, tmp_path):
    cfg = ExperimentConfig(network="toy_fcn", steps=15, eval_interval=5, seed=1)
    a = train(cfg, *data, out_dir=tmp_path / "a")
    train(cfg, *data, out_dir=tmp_path / "b")
    for f in ("run.csv", "eval.csv", "checkpoint.qck", "config.resolved"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    header = (tmp_path / "a" / "run.csv").read_text().splitlines()[0]
    assert header == ",".join(RUN_COLUMNS)
    assert [e["step"] for e in a.record.evals] == [5, 10, 15]
    assert "network = toy_fcn" in (tmp_path / "a" / "config.resolved").read_text()


def test_divergence_detector(data, tmp_path):
    cfg = ExperimentConfig(steps=20, divergence_factor=1e-6, divergence_patience=3)
    with pytest.raises(DivergenceError) as e:
        train(cfg, *data, out_dir=tmp_path)
    assert len(e.value.record.steps) == 3
    assert (tmp_path / "run.csv").exists()


def test_quantization_off_never_diverges(data):
    for seed in range(5):
        train(ExperimentConfig(quant="none", steps=40, seed=seed), *data)


def test_evaluate_against_baselines(data):
    tr, va = data
    counts = np.bincount(va.masks.ravel(), minlength=4)
    prior = counts.max() / counts.sum() / np.count_nonzero(counts)
    untrained = evaluate(build_network("toy_bn_net", 4), va, ExperimentConfig().bit_config())
    assert untrained["miou"] < 2 / 4
    res = train(ExperimentConfig(steps=300, seed=0), tr, va)
    trained = res.record.evals[-1]
    assert trained["miou"] > prior and trained["miou"] > untrained["miou"]
    again = evaluate(res.net, va, res.cfg)
    assert again["miou"] == trained["miou"]
    per_image = evaluate(res.net, va, res.cfg, "per_image")
    assert 0 < per_image["miou"] <= 1 and not math.isnan(per_image["miou"])
    with pytest.raises(ValueError):
        evaluate(build_network("toy_bn_net", 3), va, res.cfg)
