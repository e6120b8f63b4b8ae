import json

import numpy as np
import pytest

from qseg.config import ExperimentConfig
from qseg.data import crop_batch, generate_shapes
from qseg.network import build_network
from qseg.profiling import (OBJECTS, magnitude_histogram, profile, scale_range, summary_rows,
                            tensor_report, write_profile)
from qseg.quant import BitConfig
from qseg.tensor import Rng
from qseg.train import train


@pytest.fixture(scope="module")
def ds():
    return generate_shapes(100, 200, 64, 4)


def test_histogram_counts_sum_to_size():
    x = np.concatenate([np.zeros(7), Rng(0).normal((500,), 0, 1e-3), [1e9, -1e-20]])
    h = magnitude_histogram(x)
    assert sum(h["counts"]) + h["zeros"] == x.size
    assert h["zeros"] == 7
    assert len(h["edges"]) == len(h["counts"]) + 1


def test_tensor_report_fields():
    r = tensor_report(Rng(1).uniform((1000,), -1e-5, 1e-5), 8)
    assert r["failure_mode"] == "concentrated"
    assert r["quartiles"] == sorted(r["quartiles"])
    with pytest.raises(ValueError):
        tensor_report(np.array([]), 8)


def test_profile_objects_and_files(ds, tmp_path):
    net = build_network("toy_bn_net", 4)
    im, m = crop_batch(ds, 4, 32, Rng(0))
    rep = profile(net, BitConfig(), im, m)
    assert set(rep) == set(OBJECTS)
    assert set(rep["gamma"]) == {"enc1", "enc2", "enc3", "enc4"}
    assert "enc1" not in rep["E1"]
    for layers in rep.values():
        for r in layers.values():
            assert sum(r["counts"]) + r["zeros"] == r["size"]
    paths = write_profile(rep, tmp_path)
    assert (tmp_path / "hist_G_up8.json") in paths
    assert json.loads((tmp_path / "hist_G_up8.json").read_text())["layer"] == "up8"
    assert len(summary_rows(rep)) == len(paths)
    with pytest.raises(ValueError):
        profile(net, BitConfig(), im, m, ("U",))
    assert all(l.probe is None for l in net.layers.values())


def test_fcn_profile_has_no_bn_objects(ds):
    net = build_network("toy_fcn", 4)
    im, m = crop_batch(ds, 2, 32, Rng(0))
    rep = profile(net, BitConfig(), im, m, ("G", "gamma"))
    assert set(rep) == {"G"}


def trained_ratio(arch, seed, ds):
    res = train(ExperimentConfig(network=arch, steps=200, seed=seed), ds, ds.subset(range(10)))
    im, m = crop_batch(ds, 8, 32, Rng(seed).split(3))
    rep = profile(res.net, res.cfg, im, m, ("G", "gamma", "beta"))
    hi, lo = scale_range(rep)
    return hi / lo, rep


@pytest.mark.slow
def test_gradient_scale_spread_wider_without_bn(ds):
    fcn = [trained_ratio("toy_fcn", s, ds)[0] for s in range(2)]
    bn = []
    for s in range(2):
        ratio, rep = trained_ratio("toy_bn_net", s, ds)
        bn.append(ratio)
        for obj in ("gamma", "beta"):
            for r in rep[obj].values():
                assert -2 <= r["quartiles"][1] and r["quartiles"][3] <= 2
    assert min(fcn) > max(bn)
