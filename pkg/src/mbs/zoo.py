"""Generators for the benchmark architectures as IR graphs.

Block structure follows the usual reference definitions:

* ``resnet-cifar``: 6n+2 layers, widths 16/32/64, parameter-free
  subsample-and-pad shortcuts, one macroblock per spatial stage.
* ``resnet-imagenet-basic`` / ``-bottleneck``: 7x7 stem + max pool, stage
  widths 64/128/256/512 (x4 at bottleneck outputs), 1x1 projection
  shortcuts, stride on the 3x3 conv.  The stem joins stage 1 in a custom
  first macroblock so that there are four macroblocks; bottleneck stages
  are custom too because their first 1x1 conv still runs at the previous
  resolution.
* ``mobilenet-v1``: 3x3 stem and 13 depthwise-separable pairs.  Macroblocks
  are the six width groups; a depthwise conv follows the width of the
  pointwise conv that feeds it.
* ``densenet-bc``: DenseNet-BC-121 (growth 32, bottleneck 4x, compression
  0.5, pre-activation batch norm).  The growth rate is each dense block's
  base width.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ir import ClassifierCoupling, GraphBuilder, IRError, ModelGraph

FAMILIES = {
    "resnet-cifar": (20, 32, 44, 56, 110, 1202),
    "resnet-imagenet-basic": (18, 34),
    "resnet-imagenet-bottleneck": (101,),
    "mobilenet-v1": (None,),
    "densenet-bc": (121,),
}
DEFAULT_RESOLUTION = {
    "resnet-cifar": 32,
    "resnet-imagenet-basic": 224,
    "resnet-imagenet-bottleneck": 224,
    "mobilenet-v1": 224,
    "densenet-bc": 224,
}
MOBILENET_RESOLUTIONS = (224, 192)

_IMAGENET_BLOCKS = {18: (2, 2, 2, 2), 34: (3, 4, 6, 3), 101: (3, 4, 23, 3)}
_DENSENET_BLOCKS = {121: (6, 12, 24, 16)}


class UnsupportedModel(IRError):
    pass


@dataclass(frozen=True)
class ZooSpec:
    family: str
    depth: int | None = None
    input_resolution: int | None = None

    def resolved(self) -> ZooSpec:
        if self.family not in FAMILIES:
            raise UnsupportedModel(f"unknown family {self.family!r}; choose from {sorted(FAMILIES)}")
        depth = self.depth
        if self.family == "mobilenet-v1":
            depth = None
        elif depth is None and len(FAMILIES[self.family]) == 1:
            depth = FAMILIES[self.family][0]
        if depth not in FAMILIES[self.family]:
            raise UnsupportedModel(f"{self.family} does not support depth {self.depth}")
        L = self.input_resolution or DEFAULT_RESOLUTION[self.family]
        if self.family == "mobilenet-v1" and L not in MOBILENET_RESOLUTIONS:
            raise UnsupportedModel(f"mobilenet-v1 supports L in {MOBILENET_RESOLUTIONS}, got {L}")
        if self.family.startswith("resnet-cifar") and L != 32:
            raise UnsupportedModel("resnet-cifar is defined for 32x32 inputs")
        return ZooSpec(self.family, depth, L)


def generate(spec: ZooSpec) -> ModelGraph:
    spec = spec.resolved()
    if spec.family == "resnet-cifar":
        return resnet_cifar(spec.depth)
    if spec.family.startswith("resnet-imagenet"):
        return resnet_imagenet(spec.depth, spec.input_resolution)
    if spec.family == "mobilenet-v1":
        return mobilenet_v1(spec.input_resolution)
    return densenet_bc(spec.depth, spec.input_resolution)


def resnet_cifar(depth: int = 20, num_classes: int = 10) -> ModelGraph:
    if (depth - 2) % 6:
        raise UnsupportedModel(f"resnet-cifar depth must be 6n+2, got {depth}")
    n = (depth - 2) // 6
    b = GraphBuilder(f"resnet{depth}-cifar", 32)
    x = b.conv(16, 3)
    last = x
    for stage, width in enumerate((16, 32, 64)):
        for block in range(n):
            stride = 2 if stage > 0 and block == 0 else 1
            b.conv(width, 3, stride, src=x)
            last = b.conv(width, 3, 1, has_relu=False)
            shortcut = b.pool(1, 2, src=x) if stride == 2 else x
            x = b.join([last, shortcut], "add", zero_pad=stride == 2, has_relu=True)
    return b.build(
        classifier_params=64 * num_classes + num_classes,
        coupling=ClassifierCoupling(last, num_classes),
    )


def resnet_imagenet(depth: int = 18, input_resolution: int = 224, num_classes: int = 1000) -> ModelGraph:
    blocks = _IMAGENET_BLOCKS[depth]
    bottleneck = depth >= 50
    expansion = 4 if bottleneck else 1
    b = GraphBuilder(f"resnet{depth}", input_resolution)
    stem = b.conv(64, 7, 2)
    x = b.pool(3, 2)
    in_width = 64
    groups: list[list[int]] = [[stem]]
    for stage, (count, width) in enumerate(zip(blocks, (64, 128, 256, 512))):
        if stage > 0:
            groups.append([])
        for block in range(count):
            stride = 2 if stage > 0 and block == 0 else 1
            out_width = width * expansion
            if bottleneck:
                ids = [b.conv(width, 1, src=x), b.conv(width, 3, stride), b.conv(out_width, 1, has_relu=False)]
            else:
                ids = [b.conv(width, 3, stride, src=x), b.conv(width, 3, has_relu=False)]
            shortcut = x
            if stride != 1 or in_width != out_width:
                shortcut = b.conv(out_width, 1, stride, src=x, has_relu=False)
                ids.append(shortcut)
            groups[-1].extend(ids)
            x = b.join([ids[-2] if shortcut in ids else ids[-1], shortcut], "add", has_relu=True)
            in_width = out_width
    return b.build(
        groups,
        base_widths=[64, 128, 256, 512],
        # a bottleneck stage opens with a 1x1 conv at the previous resolution
        custom=[True] + [bottleneck] * 3,
        classifier_params=512 * expansion * num_classes + num_classes,
        coupling=ClassifierCoupling(x, num_classes),
    )


_MOBILENET_PAIRS = ((64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
                    (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1))


def mobilenet_v1(input_resolution: int = 224, num_classes: int = 1000) -> ModelGraph:
    b = GraphBuilder(f"mobilenet-v1-{input_resolution}", input_resolution)
    groups: list[list[int]] = [[b.conv(32, 3, 2)]]
    width = 32
    for out_width, stride in _MOBILENET_PAIRS:
        groups[-1].append(b.conv(width, 3, stride, conv_kind="depthwise"))
        pw = b.conv(out_width, 1, conv_kind="pointwise")
        if out_width != width:
            groups.append([])
        groups[-1].append(pw)
        width = out_width
    return b.build(
        groups,
        base_widths=[32, 64, 128, 256, 512, 1024],
        custom=[True] * len(groups),
        classifier_params=1024 * num_classes + num_classes,
        coupling=ClassifierCoupling(pw, num_classes),
    )


def densenet_bc(depth: int = 121, input_resolution: int = 224, num_classes: int = 1000,
                growth: int = 32) -> ModelGraph:
    blocks = _DENSENET_BLOCKS[depth]
    b = GraphBuilder(f"densenet-bc-{depth}", input_resolution)
    groups: list[list[int]] = [[b.conv(2 * growth, 7, 2)]]
    x = b.pool(3, 2)
    for i, count in enumerate(blocks):
        if i > 0:
            groups.append([])
        for _ in range(count):
            neck = b.conv(4 * growth, 1, src=x, bn="in")
            new = b.conv(growth, 3, bn="in")
            groups[-1] += [neck, new]
            x = b.join([x, new], "concat")
        if i < len(blocks) - 1:
            groups[-1].append(b.conv(0, 1, src=x, bn="in", compression=0.5))
            x = b.pool(2, 2, pool_kind="avg")
    final_width = b._shape(x)[0]
    # head: final batch norm + linear layer, both proportional to the feature width
    return b.build(
        groups,
        base_widths=[growth] * len(blocks),
        custom=[True, False, False, False],
        classifier_params=(2 + num_classes) * final_width + num_classes,
        coupling=ClassifierCoupling(x, num_classes + 2),
    )
