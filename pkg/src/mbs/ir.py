"""Architecture intermediate representation for macroblock scaling.

A model is an ordered list of nodes (conv, pool, join) in topological
order.  Node ``id`` equals its position in the list.  Each node names its
producers in ``inputs``; the sentinel ``INPUT`` (-1) is the image.  Only
widths, spatial sizes and kernel geometry are modelled; there is no tensor
dataflow beyond the width-coupling needed for parameter counting and plan
propagation.

Documents are JSON objects tagged ``"version": "mbs-ir/1"``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence, Union

IR_VERSION = "mbs-ir/1"
INPUT = -1

CONV_KINDS = ("standard", "depthwise", "pointwise")
BN_PLACEMENTS = ("out", "in", "none")
PADDINGS = ("same", "valid")
POOL_KINDS = ("max", "avg")
JOIN_MODES = ("add", "concat")


class IRError(ValueError):
    """Base class for malformed architecture documents or graphs."""

    category = "validation"


class SchemaError(IRError):
    pass


class ChainError(IRError):
    pass


class MacroblockError(IRError):
    pass


class PlanMismatchError(IRError):
    pass


@dataclass(frozen=True)
class ConvLayer:
    id: int
    kernel_size: int
    stride: int
    in_channels: int
    out_channels: int
    in_spatial: int
    out_spatial: int
    conv_kind: str = "standard"
    has_relu: bool = True
    macroblock_id: int | None = None
    scalable: bool = True
    padding: str = "same"
    inputs: tuple[int, ...] = ()
    bn: str = "out"
    # out_channels = floor(in_channels * compression), re-derived when widths change
    compression: float | None = None

    kind = "conv"


@dataclass(frozen=True)
class PoolLayer:
    id: int
    window: int
    stride: int
    in_spatial: int
    out_spatial: int
    pool_kind: str = "max"
    padding: str = "same"
    inputs: tuple[int, ...] = ()

    kind = "pool"


@dataclass(frozen=True)
class JoinLayer:
    """Residual add or dense concat of several producers.

    With ``zero_pad`` an add accepts narrower inputs and pads them with
    zero channels (parameter-free shortcut).
    """

    id: int
    mode: str
    inputs: tuple[int, ...]
    out_spatial: int
    zero_pad: bool = False
    has_relu: bool = False

    kind = "join"


Layer = Union[ConvLayer, PoolLayer, JoinLayer]


@dataclass(frozen=True)
class Macroblock:
    id: int
    layer_ids: tuple[int, ...]
    out_spatial: int | None
    base_width: int
    custom: bool = False


@dataclass(frozen=True)
class ClassifierCoupling:
    """The classifier head grows by ``params_per_channel`` per output channel of node ``layer_id``."""

    layer_id: int
    params_per_channel: int


@dataclass(frozen=True)
class ModelGraph:
    name: str
    input_resolution: int
    layers: tuple[Layer, ...]
    macroblocks: tuple[Macroblock, ...] = ()
    input_channels: int = 3
    classifier_params: int = 0
    classifier_width_coupling: ClassifierCoupling | None = None
    count_batchnorm: bool = True

    @property
    def convs(self) -> list[ConvLayer]:
        return [layer for layer in self.layers if isinstance(layer, ConvLayer)]

    @property
    def n(self) -> int:
        return len(self.convs)

    @property
    def M(self) -> int:
        return len(self.macroblocks)

    def layer(self, layer_id: int) -> Layer:
        return self.layers[layer_id]

    def stage_widths(self) -> list[int]:
        return [mb.base_width for mb in self.macroblocks]


# --------------------------------------------------------------------------
# width / spatial propagation


def _same_out(in_spatial: int, stride: int) -> int:
    return -(-in_spatial // stride)


def _valid_out(in_spatial: int, kernel: int, stride: int) -> int:
    return (in_spatial - kernel) // stride + 1


def _expected_out(in_spatial: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return _same_out(in_spatial, stride)
    return _valid_out(in_spatial, kernel, stride)


def tensor_shapes(graph: ModelGraph) -> dict[int, tuple[int, int]]:
    """Return ``{node_id: (channels, spatial)}`` including ``INPUT``."""
    shapes: dict[int, tuple[int, int]] = {INPUT: (graph.input_channels, graph.input_resolution)}
    for layer in graph.layers:
        shapes[layer.id] = tensor_shapes_step(layer, shapes)
    return shapes


def consumers(graph: ModelGraph) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {INPUT: []}
    for layer in graph.layers:
        out.setdefault(layer.id, [])
        for src in layer.inputs:
            out.setdefault(src, []).append(layer.id)
    return out


# --------------------------------------------------------------------------
# validation


def validate(graph: ModelGraph) -> ModelGraph:
    """Check every structural invariant; return the graph unchanged."""
    if not graph.name:
        raise SchemaError("name: must be a non-empty string")
    if graph.input_resolution < 1:
        raise SchemaError("input_resolution: must be >= 1")
    if graph.input_channels < 1:
        raise SchemaError("input_channels: must be >= 1")
    if graph.classifier_params < 0:
        raise SchemaError("classifier_params: must be >= 0")
    if not graph.layers:
        raise SchemaError("layers: at least one layer required")

    shapes: dict[int, tuple[int, int]] = {INPUT: (graph.input_channels, graph.input_resolution)}
    for pos, layer in enumerate(graph.layers):
        where = f"layers[{pos}]"
        if layer.id != pos:
            raise SchemaError(f"{where}.id: expected {pos}, got {layer.id}")
        if not layer.inputs:
            raise SchemaError(f"{where}.inputs: at least one producer required")
        for src in layer.inputs:
            if src != INPUT and not 0 <= src < pos:
                raise ChainError(
                    f"{where}.inputs: producer {src} is not an earlier layer (graph must be acyclic, topologically ordered)"
                )
        if isinstance(layer, ConvLayer):
            _check_conv(layer, where, shapes)
        elif isinstance(layer, PoolLayer):
            _check_pool(layer, where, shapes)
        elif isinstance(layer, JoinLayer):
            _check_join(layer, where, shapes)
        else:  # pragma: no cover - constructor prevents this
            raise SchemaError(f"{where}: unknown layer type {type(layer).__name__}")
        shapes[layer.id] = tensor_shapes_step(layer, shapes)

    if INPUT not in {src for layer in graph.layers for src in layer.inputs}:
        raise ChainError("no layer consumes the network input")
    if not graph.convs:
        raise SchemaError("layers: at least one conv layer required")

    _check_macroblocks(graph)

    coupling = graph.classifier_width_coupling
    if coupling is not None:
        if not 0 <= coupling.layer_id < len(graph.layers):
            raise SchemaError(f"classifier_width_coupling.layer_id: no layer {coupling.layer_id}")
        if coupling.params_per_channel < 0:
            raise SchemaError("classifier_width_coupling.params_per_channel: must be >= 0")
    return graph


def tensor_shapes_step(layer: Layer, shapes: Mapping[int, tuple[int, int]]) -> tuple[int, int]:
    if isinstance(layer, ConvLayer):
        return layer.out_channels, layer.out_spatial
    if isinstance(layer, PoolLayer):
        return shapes[layer.inputs[0]][0], layer.out_spatial
    widths = [shapes[i][0] for i in layer.inputs]
    return (sum(widths) if layer.mode == "concat" else max(widths)), layer.out_spatial


def _check_conv(layer: ConvLayer, where: str, shapes: Mapping[int, tuple[int, int]]) -> None:
    for name in ("kernel_size", "stride", "in_channels", "out_channels", "in_spatial", "out_spatial"):
        value = getattr(layer, name)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise SchemaError(f"{where}.{name}: must be an integer >= 1, got {value!r}")
    if layer.conv_kind not in CONV_KINDS:
        raise SchemaError(f"{where}.conv_kind: must be one of {CONV_KINDS}, got {layer.conv_kind!r}")
    if layer.padding not in PADDINGS:
        raise SchemaError(f"{where}.padding: must be one of {PADDINGS}, got {layer.padding!r}")
    if layer.bn not in BN_PLACEMENTS:
        raise SchemaError(f"{where}.bn: must be one of {BN_PLACEMENTS}, got {layer.bn!r}")
    if layer.conv_kind == "depthwise" and layer.in_channels != layer.out_channels:
        raise SchemaError(f"{where}: depthwise layer needs in_channels == out_channels")
    if layer.conv_kind == "pointwise" and layer.kernel_size != 1:
        raise SchemaError(f"{where}.kernel_size: pointwise layer needs kernel_size 1")
    if layer.compression is not None and not 0 < layer.compression <= 1:
        raise SchemaError(f"{where}.compression: must be in (0, 1]")
    if len(layer.inputs) != 1:
        raise SchemaError(f"{where}.inputs: conv takes exactly one producer (use a join)")
    src = layer.inputs[0]
    channels, spatial = shapes[src]
    if layer.in_spatial != spatial:
        raise ChainError(
            f"layers {src} -> {layer.id}: in_spatial {layer.in_spatial} != producer spatial {spatial}"
        )
    if layer.in_channels != channels:
        raise ChainError(
            f"layers {src} -> {layer.id}: in_channels {layer.in_channels} != producer width {channels}"
        )
    if layer.compression is not None and layer.out_channels != max(
        1, math.floor(layer.in_channels * layer.compression)
    ):
        raise ChainError(f"{where}.out_channels: does not match in_channels * compression")
    expected = _expected_out(layer.in_spatial, layer.kernel_size, layer.stride, layer.padding)
    if layer.out_spatial != expected:
        raise ChainError(
            f"{where}.out_spatial: {layer.out_spatial} inconsistent with {layer.padding} padding "
            f"(expected {expected})"
        )


def _check_pool(layer: PoolLayer, where: str, shapes: Mapping[int, tuple[int, int]]) -> None:
    for name in ("window", "stride", "in_spatial", "out_spatial"):
        value = getattr(layer, name)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise SchemaError(f"{where}.{name}: must be an integer >= 1, got {value!r}")
    if layer.pool_kind not in POOL_KINDS:
        raise SchemaError(f"{where}.pool_kind: must be one of {POOL_KINDS}")
    if layer.padding not in PADDINGS:
        raise SchemaError(f"{where}.padding: must be one of {PADDINGS}")
    if len(layer.inputs) != 1:
        raise SchemaError(f"{where}.inputs: pool takes exactly one producer")
    src = layer.inputs[0]
    if layer.in_spatial != shapes[src][1]:
        raise ChainError(
            f"layers {src} -> {layer.id}: in_spatial {layer.in_spatial} != producer spatial {shapes[src][1]}"
        )
    expected = _expected_out(layer.in_spatial, layer.window, layer.stride, layer.padding)
    if layer.out_spatial != expected:
        raise ChainError(f"{where}.out_spatial: {layer.out_spatial} inconsistent (expected {expected})")


def _check_join(layer: JoinLayer, where: str, shapes: Mapping[int, tuple[int, int]]) -> None:
    if layer.mode not in JOIN_MODES:
        raise SchemaError(f"{where}.mode: must be one of {JOIN_MODES}")
    if len(layer.inputs) < 2:
        raise SchemaError(f"{where}.inputs: join needs at least two producers")
    spatials = {shapes[i][1] for i in layer.inputs}
    if len(spatials) != 1:
        raise ChainError(f"{where}: producers {list(layer.inputs)} disagree on spatial size {sorted(spatials)}")
    if layer.out_spatial != spatials.pop():
        raise ChainError(f"{where}.out_spatial: must equal producer spatial size")
    if layer.mode == "add" and not layer.zero_pad:
        widths = {shapes[i][0] for i in layer.inputs}
        if len(widths) != 1:
            raise ChainError(
                f"{where}: add of producers {list(layer.inputs)} with widths {sorted(widths)}"
            )


def _check_macroblocks(graph: ModelGraph) -> None:
    convs = graph.convs
    if not graph.macroblocks:
        if any(c.macroblock_id is not None for c in convs):
            raise MacroblockError("layers carry macroblock_id but macroblocks[] is empty")
        return
    conv_ids = [c.id for c in convs]
    owner: dict[int, int] = {}
    for pos, mb in enumerate(graph.macroblocks):
        if mb.id != pos:
            raise MacroblockError(f"macroblocks[{pos}].id: ids must be contiguous from 0, got {mb.id}")
        if not mb.layer_ids:
            raise MacroblockError(f"macroblocks[{pos}].layer_ids: empty macroblock")
        if mb.base_width < 1:
            raise MacroblockError(f"macroblocks[{pos}].base_width: must be >= 1")
        for lid in mb.layer_ids:
            if lid not in conv_ids:
                raise MacroblockError(f"macroblocks[{pos}]: layer {lid} is not a conv layer")
            if lid in owner:
                raise MacroblockError(f"layer {lid} belongs to macroblocks {owner[lid]} and {mb.id}")
            owner[lid] = mb.id
        if not mb.custom:
            spatials = {graph.layers[lid].out_spatial for lid in mb.layer_ids}
            if spatials != {mb.out_spatial}:
                raise MacroblockError(
                    f"macroblocks[{pos}]: member out_spatial {sorted(spatials)} != {mb.out_spatial} "
                    "(declare custom: true for irregular segments)"
                )
    missing = [lid for lid in conv_ids if lid not in owner]
    if missing:
        raise MacroblockError(f"conv layers {missing} belong to no macroblock")
    previous = 0
    for conv in convs:
        if conv.macroblock_id != owner[conv.id]:
            raise MacroblockError(
                f"layers[{conv.id}].macroblock_id: {conv.macroblock_id} but listed in macroblock {owner[conv.id]}"
            )
        if owner[conv.id] < previous:
            raise MacroblockError(f"layer {conv.id}: macroblocks must follow pipeline order")
        previous = owner[conv.id]


# --------------------------------------------------------------------------
# macroblock inference


def infer_macroblocks(graph: ModelGraph) -> ModelGraph:
    """Group conv layers sharing an output spatial size into macroblocks.

    A graph that already carries macroblocks is returned untouched.  The
    base width of each inferred macroblock is the output width of its last
    member.
    """
    if graph.macroblocks:
        return graph
    convs = graph.convs
    sizes: list[int] = []
    for conv in convs:
        if sizes and conv.out_spatial > sizes[-1]:
            raise MacroblockError(
                f"layer {conv.id}: out_spatial {conv.out_spatial} grows after {sizes[-1]}; "
                "spatial sizes must be non-increasing to infer macroblocks"
            )
        if not sizes or conv.out_spatial != sizes[-1]:
            sizes.append(conv.out_spatial)
    index = {s: i for i, s in enumerate(sizes)}
    members: list[list[int]] = [[] for _ in sizes]
    layers = list(graph.layers)
    for conv in convs:
        i = index[conv.out_spatial]
        members[i].append(conv.id)
        layers[conv.id] = replace(conv, macroblock_id=i)
    blocks = tuple(
        Macroblock(
            id=i,
            layer_ids=tuple(ids),
            out_spatial=sizes[i],
            base_width=graph.layers[ids[-1]].out_channels,
        )
        for i, ids in enumerate(members)
    )
    return validate(replace(graph, layers=tuple(layers), macroblocks=blocks))


# --------------------------------------------------------------------------
# width rescaling


def scale_width(width: int, factor: Fraction) -> int:
    """``ceil(factor * width)`` in exact arithmetic."""
    return math.ceil(Fraction(factor) * width)


def as_fraction(value: float | Fraction | int | str) -> Fraction:
    """Exact rational for a scaling factor.

    Floats are read through their shortest round-trip decimal so that
    ``0.8`` means 4/5 rather than the binary neighbour above it.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def rescale(graph: ModelGraph, factors: Sequence[Fraction]) -> ModelGraph:
    """Scale every scalable conv width of macroblock ``i`` by ``factors[i]``.

    Consumers follow their producer's new width; depthwise layers and
    compression layers re-derive their output width; the classifier head is
    adjusted through its width coupling.
    """
    if not graph.macroblocks:
        raise PlanMismatchError("graph has no macroblocks; run infer_macroblocks first")
    if len(factors) != graph.M:
        raise PlanMismatchError(f"{len(factors)} factors for {graph.M} macroblocks")
    shapes: dict[int, tuple[int, int]] = {INPUT: (graph.input_channels, graph.input_resolution)}
    layers: list[Layer] = []
    for layer in graph.layers:
        if isinstance(layer, ConvLayer):
            in_ch = shapes[layer.inputs[0]][0]
            if layer.conv_kind == "depthwise":
                out_ch = in_ch
            elif layer.compression is not None:
                out_ch = max(1, math.floor(in_ch * layer.compression))
            elif layer.scalable:
                out_ch = scale_width(layer.out_channels, factors[layer.macroblock_id])
            else:
                out_ch = layer.out_channels
            if out_ch < 1:
                raise PlanMismatchError(f"layer {layer.id}: width {out_ch} < 1")
            layer = replace(layer, in_channels=in_ch, out_channels=out_ch)
        layers.append(layer)
        shapes[layer.id] = tensor_shapes_step(layer, shapes)

    blocks = tuple(
        replace(mb, base_width=scale_width(mb.base_width, factors[mb.id])) for mb in graph.macroblocks
    )
    classifier = graph.classifier_params
    coupling = graph.classifier_width_coupling
    if coupling is not None:
        old = tensor_shapes(graph)[coupling.layer_id][0]
        new = shapes[coupling.layer_id][0]
        classifier += coupling.params_per_channel * (new - old)
    return validate(replace(graph, layers=tuple(layers), macroblocks=blocks, classifier_params=classifier))


def apply_plan(graph: ModelGraph, plan: Any) -> ModelGraph:
    """Return the compact graph described by a :class:`~mbs.planner.ScalingPlan`."""
    records = plan.macroblocks
    if len(records) != graph.M:
        raise PlanMismatchError(f"plan has {len(records)} macroblocks, graph has {graph.M}")
    for rec, mb in zip(records, graph.macroblocks):
        if rec.macroblock_id != mb.id or rec.original_width != mb.base_width:
            raise PlanMismatchError(
                f"macroblock {mb.id}: plan expects width {rec.original_width}, graph has {mb.base_width}"
            )
    return rescale(graph, [rec.beta_exact for rec in records])


# --------------------------------------------------------------------------
# (de)serialisation


def _layer_to_dict(layer: Layer) -> dict[str, Any]:
    if isinstance(layer, ConvLayer):
        d: dict[str, Any] = {
            "type": "conv",
            "id": layer.id,
            "kernel_size": layer.kernel_size,
            "stride": layer.stride,
            "in_channels": layer.in_channels,
            "out_channels": layer.out_channels,
            "in_spatial": layer.in_spatial,
            "out_spatial": layer.out_spatial,
            "conv_kind": layer.conv_kind,
            "has_relu": layer.has_relu,
            "macroblock_id": layer.macroblock_id,
            "scalable": layer.scalable,
            "padding": layer.padding,
            "inputs": list(layer.inputs),
            "bn": layer.bn,
        }
        if layer.compression is not None:
            d["compression"] = layer.compression
        return d
    if isinstance(layer, PoolLayer):
        return {
            "type": "pool",
            "id": layer.id,
            "window": layer.window,
            "stride": layer.stride,
            "in_spatial": layer.in_spatial,
            "out_spatial": layer.out_spatial,
            "pool_kind": layer.pool_kind,
            "padding": layer.padding,
            "inputs": list(layer.inputs),
        }
    return {
        "type": "join",
        "id": layer.id,
        "mode": layer.mode,
        "inputs": list(layer.inputs),
        "out_spatial": layer.out_spatial,
        "zero_pad": layer.zero_pad,
        "has_relu": layer.has_relu,
    }


def to_dict(graph: ModelGraph) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "version": IR_VERSION,
        "name": graph.name,
        "input_resolution": graph.input_resolution,
        "input_channels": graph.input_channels,
        "count_batchnorm": graph.count_batchnorm,
        "classifier_params": graph.classifier_params,
        "layers": [_layer_to_dict(layer) for layer in graph.layers],
        "macroblocks": [
            {
                "id": mb.id,
                "layer_ids": list(mb.layer_ids),
                "out_spatial": mb.out_spatial,
                "base_width": mb.base_width,
                "custom": mb.custom,
            }
            for mb in graph.macroblocks
        ],
    }
    if graph.classifier_width_coupling is not None:
        doc["classifier_width_coupling"] = {
            "layer_id": graph.classifier_width_coupling.layer_id,
            "params_per_channel": graph.classifier_width_coupling.params_per_channel,
        }
    return doc


def dumps(obj: Any) -> str:
    """Deterministic JSON text used for every artifact we write."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def serialize(graph: ModelGraph) -> str:
    return dumps(to_dict(graph))


def fingerprint(graph: ModelGraph) -> str:
    """Content hash of the canonical IR document."""
    canonical = json.dumps(to_dict(graph), sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(canonical.encode()).hexdigest()


def check_version(doc: Mapping[str, Any], family: str) -> None:
    version = doc.get("version")
    if not isinstance(version, str) or "/" not in version:
        raise SchemaError(f"version: expected '{family}/1', got {version!r}")
    name, _, rest = version.partition("/")
    major = rest.split(".", 1)[0]
    if name != family or major != "1":
        raise SchemaError(f"version: unsupported format {version!r} (this reader handles {family}/1)")


class _Reader:
    """Typed field access that names the offending field on failure."""

    def __init__(self, doc: Mapping[str, Any], where: str):
        if not isinstance(doc, Mapping):
            raise SchemaError(f"{where}: expected an object")
        self.doc = doc
        self.where = where

    def get(self, key: str, types: type | tuple[type, ...], default: Any = ...) -> Any:
        if key not in self.doc:
            if default is ...:
                raise SchemaError(f"{self.where}.{key}: required field missing")
            return default
        value = self.doc[key]
        if value is None and default is None:
            return None
        ok = isinstance(value, types)
        if int in (types if isinstance(types, tuple) else (types,)) and isinstance(value, bool):
            ok = bool in (types if isinstance(types, tuple) else (types,))
        if not ok:
            raise SchemaError(f"{self.where}.{key}: wrong type {type(value).__name__}")
        return value


def _parse_inputs(r: _Reader, pos: int) -> tuple[int, ...]:
    raw = r.get("inputs", list, None)
    if raw is None:
        return (pos - 1,) if pos > 0 else (INPUT,)
    if not all(isinstance(i, int) and not isinstance(i, bool) for i in raw):
        raise SchemaError(f"{r.where}.inputs: must be a list of layer ids")
    return tuple(raw)


def _parse_layer(raw: Any, pos: int) -> Layer:
    r = _Reader(raw, f"layers[{pos}]")
    kind = r.get("type", str)
    lid = r.get("id", int, pos)
    if "dilation" in r.doc and r.doc["dilation"] != 1:
        raise SchemaError(f"{r.where}.dilation: dilated convolutions are not supported")
    if kind == "conv":
        compression = r.get("compression", (int, float), None)
        return ConvLayer(
            id=lid,
            kernel_size=r.get("kernel_size", int),
            stride=r.get("stride", int, 1),
            in_channels=r.get("in_channels", int),
            out_channels=r.get("out_channels", int),
            in_spatial=r.get("in_spatial", int),
            out_spatial=r.get("out_spatial", int),
            conv_kind=r.get("conv_kind", str, "standard"),
            has_relu=r.get("has_relu", bool, True),
            macroblock_id=r.get("macroblock_id", int, None),
            scalable=r.get("scalable", bool, True),
            padding=r.get("padding", str, "same"),
            inputs=_parse_inputs(r, pos),
            bn=r.get("bn", str, "out"),
            compression=None if compression is None else float(compression),
        )
    if kind == "pool":
        return PoolLayer(
            id=lid,
            window=r.get("window", int),
            stride=r.get("stride", int, 1),
            in_spatial=r.get("in_spatial", int),
            out_spatial=r.get("out_spatial", int),
            pool_kind=r.get("pool_kind", str, "max"),
            padding=r.get("padding", str, "same"),
            inputs=_parse_inputs(r, pos),
        )
    if kind == "join":
        return JoinLayer(
            id=lid,
            mode=r.get("mode", str),
            inputs=_parse_inputs(r, pos),
            out_spatial=r.get("out_spatial", int),
            zero_pad=r.get("zero_pad", bool, False),
            has_relu=r.get("has_relu", bool, False),
        )
    raise SchemaError(f"{r.where}.type: unknown layer type {kind!r}")


def from_dict(doc: Mapping[str, Any]) -> ModelGraph:
    r = _Reader(doc, "model")
    check_version(doc, "mbs-ir")
    layers = tuple(_parse_layer(raw, pos) for pos, raw in enumerate(r.get("layers", list)))
    blocks = []
    for pos, raw in enumerate(r.get("macroblocks", list, [])):
        mr = _Reader(raw, f"macroblocks[{pos}]")
        ids = mr.get("layer_ids", list)
        if not all(isinstance(i, int) and not isinstance(i, bool) for i in ids):
            raise SchemaError(f"macroblocks[{pos}].layer_ids: must be a list of layer ids")
        blocks.append(
            Macroblock(
                id=mr.get("id", int, pos),
                layer_ids=tuple(ids),
                out_spatial=mr.get("out_spatial", int, None),
                base_width=mr.get("base_width", int),
                custom=mr.get("custom", bool, False),
            )
        )
    coupling = None
    raw_coupling = r.get("classifier_width_coupling", dict, None)
    if raw_coupling is not None:
        cr = _Reader(raw_coupling, "classifier_width_coupling")
        coupling = ClassifierCoupling(cr.get("layer_id", int), cr.get("params_per_channel", int))
    graph = ModelGraph(
        name=r.get("name", str),
        input_resolution=r.get("input_resolution", int),
        layers=layers,
        macroblocks=tuple(blocks),
        input_channels=r.get("input_channels", int, 3),
        classifier_params=r.get("classifier_params", int, 0),
        classifier_width_coupling=coupling,
        count_batchnorm=r.get("count_batchnorm", bool, True),
    )
    graph = validate(graph)
    # documents may leave grouping to the spatial-size rule
    return graph if graph.macroblocks else infer_macroblocks(graph)


def parse_model(document: str) -> ModelGraph:
    """Parse and validate an ``mbs-ir/1`` JSON document."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"model: not valid JSON ({exc})") from None
    return from_dict(doc)


# --------------------------------------------------------------------------
# builder used by the zoo and tests


@dataclass
class GraphBuilder:
    """Incrementally assemble a valid graph.

    Every ``add_*`` call returns the new node id; ``src`` defaults to the
    previously added node.
    """

    name: str
    input_resolution: int
    input_channels: int = 3
    layers: list[Layer] = field(default_factory=list)
    _shapes: dict[int, tuple[int, int]] = field(default_factory=dict, repr=False)

    def _shape(self, src: int) -> tuple[int, int]:
        if src == INPUT:
            return self.input_channels, self.input_resolution
        return self._shapes[src]

    def _append(self, layer: Layer) -> int:
        self.layers.append(layer)
        self._shapes[layer.id] = tensor_shapes_step(layer, _ShapeView(self))
        return layer.id

    def conv(
        self,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        *,
        src: int | None = None,
        conv_kind: str = "standard",
        has_relu: bool = True,
        scalable: bool = True,
        padding: str = "same",
        bn: str = "out",
        compression: float | None = None,
    ) -> int:
        src = self._default_src(src)
        in_ch, in_sp = self._shape(src)
        if conv_kind == "depthwise":
            out_channels = in_ch
        if compression is not None:
            out_channels = max(1, math.floor(in_ch * compression))
        lid = len(self.layers)
        self._append(
            ConvLayer(
                id=lid,
                kernel_size=kernel_size,
                stride=stride,
                in_channels=in_ch,
                out_channels=out_channels,
                in_spatial=in_sp,
                out_spatial=_expected_out(in_sp, kernel_size, stride, padding),
                conv_kind=conv_kind,
                has_relu=has_relu,
                scalable=scalable and conv_kind != "depthwise" and compression is None,
                padding=padding,
                inputs=(src,),
                bn=bn,
                compression=compression,
            )
        )
        return lid

    def pool(self, window: int, stride: int, *, src: int | None = None, pool_kind: str = "max",
             padding: str = "same") -> int:
        src = self._default_src(src)
        in_sp = self._shape(src)[1]
        lid = len(self.layers)
        self._append(
            PoolLayer(
                id=lid,
                window=window,
                stride=stride,
                in_spatial=in_sp,
                out_spatial=_expected_out(in_sp, window, stride, padding),
                pool_kind=pool_kind,
                padding=padding,
                inputs=(src,),
            )
        )
        return lid

    def join(self, inputs: Iterable[int], mode: str = "add", *, zero_pad: bool = False,
             has_relu: bool = False) -> int:
        inputs = tuple(inputs)
        lid = len(self.layers)
        self._append(
            JoinLayer(
                id=lid,
                mode=mode,
                inputs=inputs,
                out_spatial=self._shape(inputs[0])[1],
                zero_pad=zero_pad,
                has_relu=has_relu,
            )
        )
        return lid

    def _default_src(self, src: int | None) -> int:
        if src is not None:
            return src
        return len(self.layers) - 1 if self.layers else INPUT

    def build(
        self,
        macroblocks: Sequence[Sequence[int]] | None = None,
        *,
        base_widths: Sequence[int] | None = None,
        custom: Sequence[bool] | None = None,
        classifier_params: int = 0,
        coupling: ClassifierCoupling | None = None,
        count_batchnorm: bool = True,
    ) -> ModelGraph:
        """Finish the graph; without ``macroblocks`` they are inferred by spatial size."""
        graph = ModelGraph(
            name=self.name,
            input_resolution=self.input_resolution,
            layers=tuple(self.layers),
            input_channels=self.input_channels,
            classifier_params=classifier_params,
            classifier_width_coupling=coupling,
            count_batchnorm=count_batchnorm,
        )
        if macroblocks is None:
            return infer_macroblocks(validate(graph))
        layers = list(graph.layers)
        blocks = []
        for i, ids in enumerate(macroblocks):
            for lid in ids:
                layers[lid] = replace(layers[lid], macroblock_id=i)
            is_custom = bool(custom[i]) if custom is not None else False
            spatials = {layers[lid].out_spatial for lid in ids}
            width = base_widths[i] if base_widths is not None else layers[ids[-1]].out_channels
            blocks.append(
                Macroblock(
                    id=i,
                    layer_ids=tuple(ids),
                    out_spatial=None if is_custom else min(spatials),
                    base_width=width,
                    custom=is_custom,
                )
            )
        return validate(replace(graph, layers=tuple(layers), macroblocks=tuple(blocks)))


class _ShapeView:
    def __init__(self, builder: GraphBuilder):
        self.builder = builder

    def __getitem__(self, src: int) -> tuple[int, int]:
        return self.builder._shape(src)
