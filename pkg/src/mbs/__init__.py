"""Macroblock scaling (MBS) model-reduction planner.

Typical use::

    from mbs import zoo, stats, planner, report, ir

    graph = zoo.generate(zoo.ZooSpec("resnet-cifar", 20))
    collection = stats.simulate_stats(graph, n_images=8, seed=0)
    plan = planner.run_mbs(graph, collection, planner.PlannerConfig(k_factor=1.0))
    compact = ir.apply_plan(graph, plan)
    print(report.report_text(report.compare(graph, plan, [0.8])))
"""

from .ir import ModelGraph, apply_plan, infer_macroblocks, parse_model, serialize
from .planner import PlannerConfig, ScalingPlan, run_mbs
from .report import alpha_scale, compare, count_params, tradeoff_table
from .rf import classify_layers, compute_rf
from .stats import flop_count, load_stats, simulate_stats

__version__ = "0.1.0"
