"""
Parameter counts for known compact configurations
=================================================

Stock parameter counts for the ImageNet models and the reduction obtained
by applying some well-known compact stage widths.
"""

from mbs import zoo
from mbs.planner import plan_from_betas, plan_from_widths
from mbs.report import compare, count_params

cases = [
    ("ResNet-18", zoo.resnet_imagenet(18), [64, 128, 256, 453]),
    ("ResNet-34", zoo.resnet_imagenet(34), [64, 128, 192, 359]),
    ("ResNet-101", zoo.resnet_imagenet(101), [64, 128, 174, 337]),
    ("MobileNet-224", zoo.mobilenet_v1(224), [32, 64, 128, 256, 474, 879]),
    ("MobileNet-192", zoo.mobilenet_v1(192), [32, 64, 128, 256, 441, 825]),
]

print(f"{'model':<14} {'params':>12} {'compact':>12} {'reduction':>9}  widths")
for name, graph, widths in cases:
    row = compare(graph, plan_from_widths(graph, widths))[0]
    print(f"{name:<14} {count_params(graph):>12,} {row.params_after:>12,} {row.reduction_ratio:>9.2%}  {widths}")

# DenseNet scales the growth rate of each dense block instead of a stage width
dense = zoo.densenet_bc()
row = compare(dense, plan_from_betas(dense, [1, 0.987, 0.832, 0.809]))[0]
print(f"{'DenseNet-121':<14} {row.params_before:>12,} {row.params_after:>12,} {row.reduction_ratio:>9.2%}  "
      f"growth {list(row.widths_after)}")
