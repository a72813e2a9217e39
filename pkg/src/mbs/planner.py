"""Macroblock scaling: effective flops, redundancy ratios and compact widths.

Effective flops are accumulated as exact rationals.  A ``p`` read from a
float is an exact binary fraction and flop counts are integers, so every
total, ratio and ceiling below is computed without rounding; the only
rounding happens when ``r`` and ``beta`` are reported as floats.  This
makes plans independent of summation order and exactly invariant under a
common rescaling of the effective flops.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping

from .ir import (
    ModelGraph,
    PlanMismatchError,
    SchemaError,
    as_fraction,
    check_version,
    dumps,
    fingerprint,
)
from .rf import RFProfile, analyze
from .stats import StatsCollection, check_against, flop_count

PLAN_VERSION = "mbs-plan/1"


@dataclass(frozen=True)
class PlannerConfig:
    """Receptive-field threshold ``z`` in pixels, or ``k_factor`` with ``z = k * L``."""

    z: float | None = None
    k_factor: float | None = None

    def __post_init__(self):
        if self.z is not None and self.k_factor is not None:
            raise ValueError("give either z or k_factor, not both")
        if self.z is not None and self.z <= 0:
            raise ValueError("z must be positive")
        if self.k_factor is not None and self.k_factor <= 0:
            raise ValueError("k_factor must be positive")

    def resolve(self, graph: ModelGraph) -> Fraction:
        if self.z is not None:
            return as_fraction(self.z)
        return as_fraction(1 if self.k_factor is None else self.k_factor) * graph.input_resolution


@dataclass(frozen=True)
class EffectiveFlops:
    per_layer: dict[int, Fraction]
    total: tuple[Fraction, ...] = ()
    base: tuple[Fraction, ...] = ()


@dataclass(frozen=True)
class MacroblockScale:
    macroblock_id: int
    r: float
    beta: float
    original_width: int
    compact_width: int
    degenerate: bool = False
    beta_exact: Fraction = field(default=Fraction(1), repr=False)


@dataclass(frozen=True)
class ScalingPlan:
    macroblocks: tuple[MacroblockScale, ...]
    config: PlannerConfig = PlannerConfig()
    z: Fraction = Fraction(0)
    boundary: int | None = None
    fingerprint: str = ""
    model_name: str = ""

    @property
    def betas(self) -> list[float]:
        return [m.beta for m in self.macroblocks]

    @property
    def compact_widths(self) -> list[int]:
        return [m.compact_width for m in self.macroblocks]

    @property
    def degenerate(self) -> bool:
        return any(m.degenerate for m in self.macroblocks)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": PLAN_VERSION,
            "model_name": self.model_name,
            "fingerprint": self.fingerprint,
            "config": {
                "z": self.config.z,
                "k_factor": self.config.k_factor,
                "z_resolved": float(self.z),
                "boundary": self.boundary,
            },
            "macroblocks": [
                {
                    "id": m.macroblock_id,
                    "r": m.r,
                    "beta": m.beta,
                    "beta_exact": f"{m.beta_exact.numerator}/{m.beta_exact.denominator}",
                    "original_width": m.original_width,
                    "compact_width": m.compact_width,
                    "degenerate": m.degenerate,
                }
                for m in self.macroblocks
            ],
        }

    def serialize(self) -> str:
        return dumps(self.to_dict())


def load_plan(document: str | Mapping[str, Any]) -> ScalingPlan:
    doc = json.loads(document) if isinstance(document, str) else document
    if not isinstance(doc, Mapping):
        raise SchemaError("plan: expected an object")
    check_version(doc, "mbs-plan")
    try:
        cfg = doc.get("config", {})
        records = []
        for raw in doc["macroblocks"]:
            exact = Fraction(raw["beta_exact"]) if "beta_exact" in raw else as_fraction(raw["beta"])
            records.append(
                MacroblockScale(
                    macroblock_id=int(raw["id"]),
                    r=float(raw["r"]),
                    beta=float(raw["beta"]),
                    original_width=int(raw["original_width"]),
                    compact_width=int(raw["compact_width"]),
                    degenerate=bool(raw.get("degenerate", False)),
                    beta_exact=exact,
                )
            )
        return ScalingPlan(
            macroblocks=tuple(records),
            config=PlannerConfig(cfg.get("z"), cfg.get("k_factor")),
            z=as_fraction(cfg.get("z_resolved", 0)),
            boundary=cfg.get("boundary"),
            fingerprint=str(doc.get("fingerprint", "")),
            model_name=str(doc.get("model_name", "")),
        )
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        raise SchemaError(f"plan: malformed document ({exc})") from None


def plan_from_widths(graph: ModelGraph, widths) -> ScalingPlan:
    """A plan that maps each macroblock's base width to ``widths[i]`` (e.g. a known compact config)."""
    if len(widths) != graph.M:
        raise PlanMismatchError(f"{len(widths)} widths for {graph.M} macroblocks")
    records = []
    for mb, w in zip(graph.macroblocks, widths):
        beta = Fraction(int(w), mb.base_width)
        records.append(MacroblockScale(mb.id, float(1 / beta - 1), float(beta), mb.base_width, int(w),
                                       beta_exact=beta))
    return ScalingPlan(tuple(records), fingerprint=fingerprint(graph), model_name=graph.name)


def plan_from_betas(graph: ModelGraph, betas) -> ScalingPlan:
    """A plan applying the scaling factors ``betas`` (read as decimals) per macroblock."""
    if len(betas) != graph.M:
        raise PlanMismatchError(f"{len(betas)} factors for {graph.M} macroblocks")
    records = []
    for mb, b in zip(graph.macroblocks, betas):
        beta = as_fraction(b)
        records.append(MacroblockScale(mb.id, float(1 / beta - 1), float(beta), mb.base_width,
                                       math.ceil(beta * mb.base_width), beta_exact=beta))
    return ScalingPlan(tuple(records), fingerprint=fingerprint(graph), model_name=graph.name)


def effective_flops(graph: ModelGraph, stats: StatsCollection) -> dict[int, Fraction]:
    """``p * flop_count`` for every conv layer, exactly."""
    check_against(stats, graph)
    p = stats.p_by_layer()
    return {c.id: Fraction(p[c.id]) * flop_count(c) for c in graph.convs}


def accumulate(graph: ModelGraph, profile: RFProfile, eff: Mapping[int, Fraction]) -> EffectiveFlops:
    """Cumulative total and base effective flops up to each macroblock.

    Both sums run over the prefix ``m_0 .. m_i``; the base sum keeps only
    layers whose receptive field does not exceed the boundary.
    """
    convs = graph.convs
    missing = [c.id for c in convs if c.id not in eff]
    if missing:
        raise ValueError(f"effective flops missing for layers {missing}")
    base = profile.base_ids()
    totals, bases = [], []
    for mb in graph.macroblocks:
        e_total = Fraction(0)
        e_base = Fraction(0)
        for c in convs:
            if c.macroblock_id <= mb.id:
                e_total += eff[c.id]
                if c.id in base:
                    e_base += eff[c.id]
        totals.append(e_total)
        bases.append(e_base)
    return EffectiveFlops(dict(eff), tuple(totals), tuple(bases))


def plan(graph: ModelGraph, profile: RFProfile, eff: EffectiveFlops | Mapping[int, Fraction], *,
         config: PlannerConfig | None = None, stats_fingerprint: str = "") -> ScalingPlan:
    """Redundancy ratio, scaling factor and compact width for each macroblock."""
    if not isinstance(eff, EffectiveFlops) or len(eff.total) != graph.M:
        eff = accumulate(graph, profile, eff.per_layer if isinstance(eff, EffectiveFlops) else eff)
    records = []
    for mb, e_total, e_base in zip(graph.macroblocks, eff.total, eff.base):
        degenerate = e_total == 0
        if e_total > e_base:
            r = 1 - e_base / e_total
            beta = 1 / (1 + r)
        else:
            r, beta = Fraction(0), Fraction(1)
        records.append(
            MacroblockScale(
                macroblock_id=mb.id,
                r=float(r),
                beta=float(beta),
                original_width=mb.base_width,
                compact_width=math.ceil(beta * mb.base_width),
                degenerate=degenerate,
                beta_exact=beta,
            )
        )
    return ScalingPlan(
        macroblocks=tuple(records),
        config=config or PlannerConfig(z=float(profile.z)),
        z=profile.z,
        boundary=profile.boundary,
        fingerprint=stats_fingerprint or fingerprint(graph),
        model_name=graph.name,
    )


def run_mbs(graph: ModelGraph, stats: StatsCollection, config: PlannerConfig | None = None) -> ScalingPlan:
    """End to end: classify layers, weigh them by effective flops, scale each macroblock."""
    config = config or PlannerConfig()
    profile = analyze(graph, z=config.resolve(graph))
    eff = effective_flops(graph, stats)
    return plan(graph, profile, accumulate(graph, profile, eff), config=config,
                stats_fingerprint=stats.fingerprint)
