"""Receptive fields and the base/enhancement split."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .ir import INPUT, ChainError, ConvLayer, JoinLayer, ModelGraph, as_fraction


@dataclass(frozen=True)
class RFEntry:
    layer_id: int
    rf: int
    jump: int
    is_base: bool = True
    macroblock_id: int | None = None


@dataclass(frozen=True)
class RFProfile:
    entries: tuple[RFEntry, ...]
    boundary: int | None  # None: no layer exceeds z, every layer is base
    z: Fraction
    k_factor: Fraction

    def base_ids(self) -> set[int]:
        return {e.layer_id for e in self.entries if e.is_base}

    def enhancement_ids(self) -> set[int]:
        return {e.layer_id for e in self.entries if not e.is_base}

    def entry(self, layer_id: int) -> RFEntry:
        for e in self.entries:
            if e.layer_id == layer_id:
                return e
        raise KeyError(layer_id)


def compute_rf(graph: ModelGraph) -> dict[int, tuple[int, int]]:
    """Return ``{layer_id: (rf, jump)}`` for every node of ``graph``.

    A join takes the largest incoming receptive field and jump.
    """
    table: dict[int, tuple[int, int]] = {INPUT: (1, 1)}
    for layer in graph.layers:
        for src in layer.inputs:
            if src not in table:
                raise ChainError(f"layer {layer.id}: producer {src} not yet computed (cyclic graph?)")
        if isinstance(layer, JoinLayer):
            table[layer.id] = (
                max(table[s][0] for s in layer.inputs),
                max(table[s][1] for s in layer.inputs),
            )
            continue
        rf_in, jump_in = table[layer.inputs[0]]
        kernel = layer.kernel_size if isinstance(layer, ConvLayer) else layer.window
        table[layer.id] = (rf_in + (kernel - 1) * jump_in, jump_in * layer.stride)
    del table[INPUT]
    return table


def rf_boundary(rfs: Sequence[int], z: Fraction | float) -> int | None:
    """Smallest realized receptive field strictly greater than ``z``."""
    above = [rf for rf in rfs if rf > z]
    return min(above) if above else None


def classify_layers(graph: ModelGraph, rf_table: dict[int, tuple[int, int]], z) -> RFProfile:
    z = as_fraction(z)
    if z <= 0:
        raise ValueError(f"z must be positive, got {z}")
    convs = graph.convs
    missing = [c.id for c in convs if c.id not in rf_table]
    if missing:
        raise ValueError(f"rf table lacks conv layers {missing}")
    boundary = rf_boundary([rf_table[c.id][0] for c in convs], z)
    entries = tuple(
        RFEntry(
            layer_id=c.id,
            rf=rf_table[c.id][0],
            jump=rf_table[c.id][1],
            is_base=boundary is None or rf_table[c.id][0] <= boundary,
            macroblock_id=c.macroblock_id,
        )
        for c in convs
    )
    return RFProfile(entries, boundary, z, z / graph.input_resolution)


def analyze(graph: ModelGraph, z=None, k_factor=None) -> RFProfile:
    """``classify_layers(compute_rf(graph))`` with ``z`` defaulting to ``k_factor * L``."""
    return classify_layers(graph, compute_rf(graph), resolve_z(graph, z, k_factor))


def resolve_z(graph: ModelGraph, z=None, k_factor=None) -> Fraction:
    if z is not None and k_factor is not None:
        raise ValueError("give either z or k_factor, not both")
    if z is not None:
        return as_fraction(z)
    return as_fraction(1 if k_factor is None else k_factor) * graph.input_resolution


def profile_text(profile: RFProfile) -> str:
    lines = [
        f"z = {float(profile.z):g} px (k = {float(profile.k_factor):g}), "
        f"boundary = {profile.boundary if profile.boundary is not None else 'unbounded'}",
        f"{'layer':>6} {'rf':>6} {'jump':>6} {'mb':>4}  class",
    ]
    for e in profile.entries:
        mb = "-" if e.macroblock_id is None else str(e.macroblock_id)
        lines.append(f"{e.layer_id:>6} {e.rf:>6} {e.jump:>6} {mb:>4}  {'base' if e.is_base else 'enhancement'}")
    return "\n".join(lines) + "\n"


def profile_csv(profile: RFProfile) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["layer_id", "rf", "jump", "macroblock", "is_base"])
    for e in profile.entries:
        writer.writerow([e.layer_id, e.rf, e.jump, "" if e.macroblock_id is None else e.macroblock_id,
                         str(e.is_base).lower()])
    return buf.getvalue()

