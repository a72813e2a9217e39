"""
Threshold sweep on CIFAR ResNets
================================

z = k * L for k from 1.4 down to 0.6.  Smaller k classifies more layers as
enhancement layers, so the reduction can only grow.
"""

from mbs import zoo
from mbs.report import tradeoff_text, tradeoff_table
from mbs.stats import simulate_stats

for depth in (20, 32, 44, 56):
    graph = zoo.resnet_cifar(depth)
    stats = simulate_stats(graph, n_images=4, seed=depth)
    print(f"resnet-{depth}")
    print(tradeoff_text(tradeoff_table(graph, stats)))
