import json
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbs import ir, zoo
from mbs.ir import (
    ChainError,
    GraphBuilder,
    MacroblockError,
    PlanMismatchError,
    SchemaError,
    apply_plan,
    infer_macroblocks,
    parse_model,
    serialize,
)
from mbs.planner import plan_from_betas, plan_from_widths

import models

MINIMAL = {
    "version": "mbs-ir/1",
    "name": "minimal",
    "input_resolution": 32,
    "layers": [
        {"type": "conv", "id": 0, "kernel_size": 3, "stride": 1, "in_channels": 3, "out_channels": 16,
         "in_spatial": 32, "out_spatial": 32},
    ],
}


def doc(**changes):
    d = json.loads(json.dumps(MINIMAL))
    d.update(changes)
    return d


def test_minimal_document():
    g = parse_model(json.dumps(MINIMAL))
    assert g.n == 1 and g.M == 1
    assert g.macroblocks[0].layer_ids == (0,)
    assert g.macroblocks[0].base_width == 16


def test_three_stage_macroblocks():
    g = models.three_stage()
    assert g.M == 3
    assert [m.out_spatial for m in g.macroblocks] == [32, 16, 8]
    assert all(c.kernel_size == 3 for c in g.convs)


def test_chain_mismatch_names_pair():
    d = doc()
    d["layers"].append({"type": "conv", "id": 1, "kernel_size": 3, "stride": 1, "in_channels": 16,
                        "out_channels": 16, "in_spatial": 16, "out_spatial": 16})
    with pytest.raises(ChainError, match="layers 0 -> 1"):
        parse_model(json.dumps(d))


def test_width_mismatch():
    d = doc()
    d["layers"].append({"type": "conv", "id": 1, "kernel_size": 3, "stride": 1, "in_channels": 8,
                        "out_channels": 16, "in_spatial": 32, "out_spatial": 32})
    with pytest.raises(ChainError):
        parse_model(json.dumps(d))


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda d: d["layers"][0].pop("kernel_size"), "kernel_size"),
        (lambda d: d["layers"][0].update(stride="2"), "stride"),
        (lambda d: d["layers"][0].update(conv_kind="grouped"), "conv_kind"),
        (lambda d: d.pop("input_resolution"), "input_resolution"),
    ],
)
def test_schema_errors_name_field(mutate, field):
    d = doc()
    mutate(d)
    with pytest.raises(SchemaError, match=field):
        parse_model(json.dumps(d))


def test_dilation_rejected():
    d = doc()
    d["layers"][0]["dilation"] = 2
    with pytest.raises(SchemaError, match="dilation"):
        parse_model(json.dumps(d))


def test_unknown_version_rejected():
    with pytest.raises(SchemaError, match="version"):
        parse_model(json.dumps(doc(version="mbs-ir/2")))


def test_macroblock_partition_violation():
    d = doc()
    d["macroblocks"] = [{"id": 0, "layer_ids": [], "out_spatial": 32, "base_width": 16}]
    with pytest.raises(MacroblockError):
        parse_model(json.dumps(d))


def test_infer_examples():
    b = GraphBuilder("six", 32)
    for s in (1, 1, 2, 1, 2, 1):
        b.conv(4, 3, s)
    g = b.build()
    assert [m.layer_ids for m in g.macroblocks] == [(0, 1), (2, 3), (4, 5)]
    assert [m.out_spatial for m in g.macroblocks] == [32, 16, 8]
    assert models.one_conv(L=32).macroblocks[0].layer_ids == (0,)


def test_infer_resnet20_stage_table():
    g = zoo.resnet_cifar(20)
    assert g.M == 3
    expected = {32: 7, 16: 6, 8: 6}  # stem + 3 blocks, then 3 blocks per stage
    for mb in g.macroblocks:
        assert len(mb.layer_ids) == expected[mb.out_spatial]
    assert [m.base_width for m in g.macroblocks] == [16, 32, 64]


def test_infer_rejects_growing_sizes():
    g = models.three_stage()
    stripped = replace(g, macroblocks=(), layers=tuple(
        replace(l, macroblock_id=None) if isinstance(l, ir.ConvLayer) else l for l in g.layers))
    bad = list(stripped.layers)
    bad[0] = replace(bad[0], out_spatial=16)
    with pytest.raises(MacroblockError):
        infer_macroblocks(replace(stripped, layers=tuple(bad)))


def test_infer_is_idempotent():
    g = models.three_stage()
    assert infer_macroblocks(g) == g
    assert infer_macroblocks(infer_macroblocks(g)) == g


@pytest.mark.parametrize("graph", [models.three_stage(), models.branchy(), zoo.resnet_cifar(20),
                                   zoo.mobilenet_v1(224), zoo.densenet_bc()], ids=lambda g: g.name)
def test_round_trip(graph):
    text = serialize(graph)
    again = parse_model(text)
    assert again == graph
    assert serialize(again) == text


def test_apply_identity():
    for g in (models.three_stage(), zoo.resnet_imagenet(18), zoo.mobilenet_v1()):
        compact = apply_plan(g, plan_from_betas(g, [1] * g.M))
        assert compact == g


def test_apply_ceil_07():
    g = models.one_conv(width=10)
    compact = apply_plan(g, plan_from_betas(g, [0.7]))
    assert compact.convs[0].out_channels == 7


def test_scale_width_exact():
    assert ir.scale_width(10, ir.as_fraction(0.7)) == 7
    assert ir.scale_width(512, Fraction(453, 512)) == 453
    assert ir.scale_width(512, Fraction(4525, 5120)) == 453


def test_resnet18_stage4():
    g = zoo.resnet_imagenet(18)
    compact = apply_plan(g, plan_from_widths(g, [64, 128, 256, 453]))
    assert compact.stage_widths()[3] == 453
    last_stage = [c for c in compact.convs if c.macroblock_id == 3]
    assert {c.out_channels for c in last_stage} == {453}
    # the following layer's input follows its producer
    for c in compact.convs:
        src = c.inputs[0]
        if src >= 0 and isinstance(compact.layers[src], ir.ConvLayer):
            assert c.in_channels == compact.layers[src].out_channels


def test_apply_plan_mismatch():
    g = models.three_stage()
    with pytest.raises(PlanMismatchError):
        apply_plan(g, plan_from_betas(zoo.resnet_imagenet(18), [1, 1, 1, 1]))


def test_fingerprint_tracks_content():
    g = models.three_stage()
    assert ir.fingerprint(g) == ir.fingerprint(parse_model(serialize(g)))
    assert ir.fingerprint(g) != ir.fingerprint(models.three_stage((16, 32, 48)))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.fractions(min_value=Fraction(1, 2), max_value=1).filter(lambda f: f > Fraction(1, 2)),
                min_size=3, max_size=3))
def test_apply_never_below_half(betas):
    g = models.three_stage()
    compact = ir.rescale(g, betas)
    for before, after in zip(g.stage_widths(), compact.stage_widths()):
        assert -(-before // 2) <= after <= before
