"""
Planning a compact ResNet-20
============================

Simulated activation statistics stand in for a trained model here: seeded
random weights, synthetic images, and the fraction of non-zero ReLU outputs
per conv.  From those we get per-macroblock scaling factors and compare the
result with uniform width scaling.
"""

from mbs import zoo
from mbs.planner import PlannerConfig, run_mbs
from mbs.report import compare, report_text
from mbs.stats import simulate_stats

graph = zoo.resnet_cifar(20)
stats = simulate_stats(graph, n_images=8, seed=42)

ps = stats.p_by_layer()
print("p per conv:", " ".join(f"{ps[c.id]:.2f}" for c in graph.convs))

plan = run_mbs(graph, stats, PlannerConfig(k_factor=1.0))
for m in plan.macroblocks:
    print(f"m{m.macroblock_id}: r={m.r:.3f} beta={m.beta:.3f} width {m.original_width} -> {m.compact_width}")

# alpha rows give the uniform baseline at similar sizes
print()
print(report_text(compare(graph, plan, [0.7, 0.8, 0.9])))
