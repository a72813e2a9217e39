import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbs import zoo
from mbs.ir import GraphBuilder, JoinLayer
from mbs.rf import analyze, classify_layers, compute_rf, profile_csv, profile_text, rf_boundary

import models
import oracles


def test_single_conv():
    g = models.one_conv()
    assert compute_rf(g)[0] == (3, 1)


def test_two_stacked_convs():
    b = GraphBuilder("two", 8)
    b.conv(4, 3)
    b.conv(4, 3)
    assert compute_rf(b.build())[1] == (5, 1)


def test_mixed_toy_matches_impulse():
    b = GraphBuilder("toy", 32)
    b.conv(4, 3)
    b.pool(2, 2)
    b.conv(4, 5, 2)
    b.pool(3, 1)
    b.conv(4, 3)
    g = b.build()
    table = compute_rf(g)
    for layer in g.layers:
        assert table[layer.id] == oracles.impulse_rf(g, layer.id)
    # frozen from the impulse oracle
    assert [table[i][0] for i in range(5)] == [3, 4, 12, 20, 28]


def test_toy_boundary_63():
    g = models.toy_chain(strides=(2, 2, 2, 2, 2))
    p = analyze(g, z=32)
    assert [e.rf for e in p.entries] == [3, 7, 15, 31, 63]
    assert p.boundary == 63
    # ties at the boundary count as base
    assert p.base_ids() == {0, 1, 2, 3, 4}
    p = analyze(g, z=31)
    assert p.boundary == 63
    p = analyze(g, z=20)
    assert p.boundary == 31 and p.enhancement_ids() == {4}


def test_z_above_max_rf_all_base():
    g = models.toy_chain(strides=(2, 2, 2, 2, 2))
    p = analyze(g, z=100)
    assert p.boundary is None
    assert p.enhancement_ids() == set()


def test_three_stage_boundary():
    g = models.three_stage()
    p = analyze(g, z=32)
    assert p.boundary == 36
    assert [e.rf for e in p.entries] == [3, 5, 7, 9, 14, 18, 22, 26, 36, 44, 52, 60]
    first_enh = min(p.enhancement_ids())
    assert p.entry(first_enh).macroblock_id == 2
    assert p.entry(first_enh).rf == 44


def test_k_factor_recorded():
    g = models.three_stage()
    p = analyze(g, k_factor=1.4)
    assert float(p.z) == pytest.approx(44.8)
    assert float(p.k_factor) == pytest.approx(1.4)


def test_nonpositive_z():
    with pytest.raises(ValueError):
        classify_layers(models.three_stage(), compute_rf(models.three_stage()), 0)


def test_rf_boundary_helper():
    assert rf_boundary([3, 7, 15], 7) == 15
    assert rf_boundary([3, 7, 15], 15) is None


def test_text_and_csv():
    p = analyze(models.three_stage(), z=32)
    text = profile_text(p)
    assert "boundary = 36" in text and "enhancement" in text
    rows = profile_csv(p).splitlines()
    assert rows[0] == "layer_id,rf,jump,macroblock,is_base"
    assert rows[9] == "10,36,4,2,true"
    assert rows[10] == "11,44,4,2,false"


def test_rf_nondecreasing_along_edges():
    for g in (zoo.resnet_imagenet(101), zoo.densenet_bc(), models.branchy()):
        table = compute_rf(g)
        for layer in g.layers:
            for src in layer.inputs:
                if src >= 0:
                    assert table[layer.id][0] >= table[src][0]
                    assert table[layer.id][1] >= table[src][1]


def test_resnet_cifar_join_takes_max():
    g = zoo.resnet_cifar(20)
    table = compute_rf(g)
    for layer in g.layers:
        if isinstance(layer, JoinLayer):
            assert table[layer.id][0] == max(table[s][0] for s in layer.inputs)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_sequential_oracle(seed):
    net, L = oracles.random_net(np.random.default_rng(seed), max_convs=8)
    g = oracles.build_net(net, L)
    table = compute_rf(g)
    for layer in g.layers:
        if table[layer.id][0] <= 64:
            assert table[layer.id] == oracles.impulse_rf(g, layer.id)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), z1=st.integers(1, 80), z2=st.integers(1, 80))
def test_base_set_monotone_in_z(seed, z1, z2):
    net, L = oracles.random_net(np.random.default_rng(seed))
    g = oracles.build_net(net, L)
    lo, hi = sorted((z1, z2))
    small, large = analyze(g, z=lo), analyze(g, z=hi)
    assert small.base_ids() <= large.base_ids()
    rfs = {e.rf for e in small.entries}
    assert small.boundary is None or small.boundary in rfs
