import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbs import zoo
from mbs.ir import GraphBuilder, SchemaError, fingerprint
from mbs.stats import (
    FingerprintMismatch,
    StatsError,
    collect_stats,
    flop_count,
    init_params,
    load_stats,
    simulate_stats,
    synthetic_images,
    uniform_stats,
)

import models
import oracles


def conv(cin, cout, k, out, kind="standard"):
    b = GraphBuilder("f", out, input_channels=cin)
    b.conv(cout, k, conv_kind=kind)
    return b.build().convs[0]


def test_flop_examples():
    assert flop_count(conv(16, 32, 3, 8)) == 294_912
    assert flop_count(conv(16, 32, 1, 8, "pointwise")) == 32_768
    assert flop_count(conv(64, 64, 3, 14, "depthwise")) == 112_896


def test_flop_linear_in_width():
    assert flop_count(conv(16, 64, 3, 8)) == 2 * flop_count(conv(16, 32, 3, 8))


def test_pool_has_no_flops():
    g = models.three_stage()
    assert flop_count(g.layers[4]) == 0


def test_p_zero_construction():
    g = models.one_conv(width=4)
    params = {0: (np.abs(np.random.default_rng(0).normal(size=(4, 3, 3, 3))), -np.ones(4))}
    images = np.zeros((3, 3, 8, 8))
    s = collect_stats(g, params, images)
    assert s.layers[0].p == 0.0


def test_p_one_construction():
    b = GraphBuilder("identity", 6, input_channels=1)
    b.conv(1, 1)
    g = b.build()
    params = {0: (np.ones((1, 1, 1, 1)), np.zeros(1))}
    images = np.random.default_rng(1).uniform(0.1, 1.0, size=(4, 1, 6, 6))
    assert collect_stats(g, params, images).layers[0].p == 1.0


def test_no_relu_layer_has_p_one():
    s = simulate_stats(zoo.resnet_cifar(20), 1, 0)
    g = zoo.resnet_cifar(20)
    for c in g.convs:
        if not c.has_relu:
            assert s.p_by_layer()[c.id] == 1.0


def test_seed42_toy_matches_direct_convolution():
    b = GraphBuilder("toy", 8)
    b.conv(4, 3)
    b.conv(6, 3, 2)
    b.conv(3, 3)
    g = b.build()
    s = simulate_stats(g, 8, 42)
    rng = np.random.default_rng(42)
    params = init_params(g, rng)
    images = synthetic_images(g, 8, rng)
    expected = oracles.direct_p(g, params, images)
    for rec in s.layers:
        assert abs(rec.p - expected[rec.layer_id]) <= 1e-12
        assert rec.sample_count == 8


def test_resnet20_has_19_entries():
    g = zoo.resnet_cifar(20)
    s = simulate_stats(g, 2, 3)
    assert len(s.layers) == 19
    assert s.source == "simulated" and s.seed == 3


def test_reproducible_and_parallel_equal():
    g = models.three_stage((4, 8, 8))
    a = simulate_stats(g, 4, 7)
    b = simulate_stats(g, 4, 7, workers=3)
    assert a.serialize() == b.serialize()
    assert a.serialize() != simulate_stats(g, 4, 8).serialize()


def test_p_near_half():
    s = simulate_stats(models.three_stage((8, 8, 8)), 4, 0)
    ps = [r.p for r in s.layers]
    assert 0.3 < np.mean(ps) < 0.7


def test_budget_and_zero_images():
    g = models.three_stage()
    with pytest.raises(StatsError, match="budget"):
        simulate_stats(g, 1, 0, budget=100)
    with pytest.raises(StatsError):
        simulate_stats(g, 0, 0)


def _doc(graph, **overrides):
    d = json.loads(uniform_stats(graph, 1.0).serialize())
    d.update(overrides)
    return d


def test_load_all_ones():
    g = models.three_stage()
    s = load_stats(json.dumps(_doc(g)), g)
    assert all(r.p == 1.0 for r in s.layers)
    assert s.fingerprint == fingerprint(g)


def test_load_missing_layer():
    g = models.three_stage()
    d = _doc(g)
    d["layers"].pop(3)
    with pytest.raises(StatsError, match="missing layer"):
        load_stats(json.dumps(d), g)


def test_load_p_out_of_range():
    g = models.three_stage()
    d = _doc(g)
    d["layers"][0]["p"] = 1.5
    with pytest.raises(StatsError, match="outside"):
        load_stats(d, g)


def test_load_fingerprint_mismatch():
    g = models.three_stage()
    with pytest.raises(FingerprintMismatch):
        load_stats(json.dumps(_doc(g)), models.three_stage((16, 32, 48)))


def test_load_version_and_round_trip():
    g = models.three_stage((4, 4, 4))
    s = simulate_stats(g, 2, 5)
    again = load_stats(s.serialize(), g)
    assert again.serialize() == s.serialize()
    with pytest.raises(SchemaError, match="version"):
        load_stats(_doc(g, version="mbs-stats/9"))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**16), n=st.integers(1, 4))
def test_p_in_unit_interval_and_mean_of_images(seed, n):
    rng = np.random.default_rng(seed)
    net, L = oracles.random_net(rng, max_convs=4, L=8, max_width=4)
    g = oracles.build_net(net, L)
    s = simulate_stats(g, n, seed)
    params_rng = np.random.default_rng(seed)
    params = init_params(g, params_rng)
    images = synthetic_images(g, n, params_rng)
    per_image = [collect_stats(g, params, images[i : i + 1]).p_by_layer() for i in range(n)]
    for rec in s.layers:
        assert 0.0 <= rec.p <= 1.0
        assert abs(rec.p - sum(pi[rec.layer_id] for pi in per_image) / n) <= 1e-12
