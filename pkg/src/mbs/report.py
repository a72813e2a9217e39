"""Parameter and flop accounting, the uniform alpha baseline and sweep tables.

Counting conventions (recorded in every report):

* conv weights: ``k*k*c_in*c_out`` (depthwise ``k*k*c``, pointwise ``c_in*c_out``), no biases;
* batch norm: two parameters per normalised channel, after (``bn="out"``) or before
  (``bn="in"``) the conv, when the model sets ``count_batchnorm``;
* classifier head: an opaque count that moves linearly with the width of the
  conv layer it is coupled to.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

from .ir import ConvLayer, ModelGraph, apply_plan, as_fraction, rescale
from .planner import PlannerConfig, ScalingPlan, run_mbs
from .stats import StatsCollection, flop_count


def conv_params(layer: ConvLayer) -> int:
    k2 = layer.kernel_size * layer.kernel_size
    if layer.conv_kind == "depthwise":
        return k2 * layer.out_channels
    if layer.conv_kind == "pointwise":
        return layer.in_channels * layer.out_channels
    return k2 * layer.in_channels * layer.out_channels


def bn_params(layer: ConvLayer) -> int:
    if layer.bn == "out":
        return 2 * layer.out_channels
    if layer.bn == "in":
        return 2 * layer.in_channels
    return 0


def count_params(graph: ModelGraph) -> int:
    total = graph.classifier_params
    for layer in graph.convs:
        total += conv_params(layer)
        if graph.count_batchnorm:
            total += bn_params(layer)
    return total


def count_flops(graph: ModelGraph) -> int:
    """Conv multiply-adds of one forward pass (the classifier head is not included)."""
    return sum(flop_count(c) for c in graph.convs)


def alpha_scale(graph: ModelGraph, alpha) -> ModelGraph:
    """Multiply every scalable width by ``alpha`` (ceil), uniformly across macroblocks."""
    a = as_fraction(alpha)
    if not 0 < a <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    return rescale(graph, [a] * graph.M)


def conventions(graph: ModelGraph) -> dict[str, object]:
    coupling = graph.classifier_width_coupling
    return {
        "batchnorm": "2 per channel" if graph.count_batchnorm else "excluded",
        "biases": "excluded",
        "classifier": (
            f"{graph.classifier_params} params, +{coupling.params_per_channel} per channel of layer {coupling.layer_id}"
            if coupling else f"{graph.classifier_params} params, fixed"
        ),
        "flops": "conv multiply-adds",
    }


@dataclass(frozen=True)
class ReductionReport:
    variant: str
    params_before: int
    params_after: int
    flops_before: int
    flops_after: int
    widths_before: tuple[int, ...]
    widths_after: tuple[int, ...]
    config: dict = field(default_factory=dict)
    conventions: dict = field(default_factory=dict)

    @property
    def reduction_ratio(self) -> float:
        return 1 - self.params_after / self.params_before

    @property
    def flops_reduction_ratio(self) -> float:
        return 1 - self.flops_after / self.flops_before


def reduction_report(graph: ModelGraph, compact: ModelGraph, variant: str, config=None) -> ReductionReport:
    return ReductionReport(
        variant=variant,
        params_before=count_params(graph),
        params_after=count_params(compact),
        flops_before=count_flops(graph),
        flops_after=count_flops(compact),
        widths_before=tuple(graph.stage_widths()),
        widths_after=tuple(compact.stage_widths()),
        config=dict(config or {}),
        conventions=conventions(graph),
    )


def compare(graph: ModelGraph, plan: ScalingPlan, baselines: Sequence[float] = ()) -> list[ReductionReport]:
    """One row for the plan, then one row per uniform-alpha baseline."""
    rows = [
        reduction_report(
            graph,
            apply_plan(graph, plan),
            "mbs",
            {"z": float(plan.z), "k_factor": plan.config.k_factor, "betas": plan.betas},
        )
    ]
    for alpha in baselines:
        rows.append(reduction_report(graph, alpha_scale(graph, alpha), f"alpha={alpha:g}", {"alpha": alpha}))
    return rows


@dataclass(frozen=True)
class TradeoffRow:
    k: float
    z: float
    reduction_ratio: float
    params_after: int
    compact_widths: tuple[int, ...]


K_SWEEP = (1.4, 1.2, 1.0, 0.8, 0.6)


def tradeoff_table(graph: ModelGraph, stats: StatsCollection,
                   k_values: Sequence[float] = K_SWEEP) -> list[TradeoffRow]:
    """Reduction obtained by the planner for each ``k`` in ``z = k * L``."""
    if any(k <= 0 for k in k_values):
        raise ValueError("k values must be positive")
    before = count_params(graph)
    rows = []
    for k in k_values:
        config = PlannerConfig(k_factor=k)
        plan = run_mbs(graph, stats, config)
        after = count_params(apply_plan(graph, plan))
        rows.append(TradeoffRow(k, float(config.resolve(graph)), 1 - after / before, after,
                                tuple(plan.compact_widths)))
    return rows


# --------------------------------------------------------------------------
# formatting


def _csv(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)  # RFC 4180: CRLF line endings
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _widths(ws: Sequence[int]) -> str:
    return "[" + ", ".join(str(w) for w in ws) + "]"


REPORT_COLUMNS = ("variant", "params_before", "params_after", "reduction_ratio", "flops_before",
                  "flops_after", "flops_reduction_ratio", "widths_before", "widths_after")


def report_csv(rows: Sequence[ReductionReport]) -> str:
    return _csv(
        REPORT_COLUMNS,
        [
            (r.variant, r.params_before, r.params_after, repr(r.reduction_ratio), r.flops_before, r.flops_after,
             repr(r.flops_reduction_ratio), _widths(r.widths_before), _widths(r.widths_after))
            for r in rows
        ],
    )


def report_text(rows: Sequence[ReductionReport]) -> str:
    lines = [f"{'variant':<12} {'params':>12} {'after':>12} {'reduction':>9} {'flops':>14} {'after':>14}  widths"]
    for r in rows:
        lines.append(
            f"{r.variant:<12} {r.params_before:>12,} {r.params_after:>12,} {r.reduction_ratio:>9.2%} "
            f"{r.flops_before:>14,} {r.flops_after:>14,}  {_widths(r.widths_after)}"
        )
    if rows:
        snapped = [max(8, -(-w // 8) * 8) for w in rows[0].widths_after]
        lines.append(f"suggested multiple-of-8 widths for {rows[0].variant}: {_widths(snapped)}")
        lines.append("conventions: " + "; ".join(f"{k}: {v}" for k, v in rows[0].conventions.items()))
    return "\n".join(lines) + "\n"


TRADEOFF_COLUMNS = ("k", "z", "reduction_ratio", "params_after", "compact_widths")


def tradeoff_csv(rows: Sequence[TradeoffRow]) -> str:
    return _csv(
        TRADEOFF_COLUMNS,
        [(repr(r.k), repr(r.z), repr(r.reduction_ratio), r.params_after, _widths(r.compact_widths)) for r in rows],
    )


def tradeoff_text(rows: Sequence[TradeoffRow]) -> str:
    lines = [f"{'k':>5} {'z':>8} {'reduction':>9} {'params':>12}  widths"]
    for r in rows:
        lines.append(f"{r.k:>5g} {r.z:>8g} {r.reduction_ratio:>9.2%} {r.params_after:>12,}  {_widths(r.compact_widths)}")
    return "\n".join(lines) + "\n"
