"""Per-layer non-zero ReLU probabilities.

Statistics either come from a recorded ``mbs-stats/1`` file or from a
small dense forward pass over synthetic images with seeded random weights.
The latter is a desk-scale stand-in for a pre-trained model; it keeps the
planner testable without framework checkpoints.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ir import (
    INPUT,
    ConvLayer,
    IRError,
    JoinLayer,
    Layer,
    ModelGraph,
    PoolLayer,
    SchemaError,
    check_version,
    dumps,
    fingerprint,
    tensor_shapes,
)

STATS_VERSION = "mbs-stats/1"
DEFAULT_BUDGET = 4_000_000


class StatsError(IRError):
    pass


class FingerprintMismatch(StatsError):
    pass


def flop_count(layer: Layer) -> int:
    """Multiply-adds of one forward pass through ``layer`` (pools and joins are free)."""
    if not isinstance(layer, ConvLayer):
        return 0
    area = layer.out_spatial * layer.out_spatial
    if layer.conv_kind == "depthwise":
        return area * layer.kernel_size**2 * layer.out_channels
    if layer.conv_kind == "pointwise":
        return area * layer.in_channels * layer.out_channels
    return area * layer.kernel_size**2 * layer.in_channels * layer.out_channels


@dataclass(frozen=True)
class LayerStats:
    layer_id: int
    p: float
    sample_count: int
    element_count: int | None = None


@dataclass(frozen=True)
class StatsCollection:
    model_name: str
    fingerprint: str
    layers: tuple[LayerStats, ...]
    source: str = "recorded"
    seed: int | None = None
    provenance: str = ""

    def p_by_layer(self) -> dict[int, float]:
        return {s.layer_id: s.p for s in self.layers}

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": STATS_VERSION,
            "model_name": self.model_name,
            "fingerprint": self.fingerprint,
            "source": self.source,
            "seed": self.seed,
            "provenance": self.provenance,
            "layers": [
                {
                    "layer_id": s.layer_id,
                    "p": s.p,
                    "sample_count": s.sample_count,
                    **({} if s.element_count is None else {"element_count": s.element_count}),
                }
                for s in self.layers
            ],
        }

    def serialize(self) -> str:
        return dumps(self.to_dict())


def check_against(stats: StatsCollection, graph: ModelGraph) -> None:
    """Raise unless ``stats`` was produced for ``graph`` and covers each conv exactly once."""
    expected = fingerprint(graph)
    if stats.fingerprint != expected:
        raise FingerprintMismatch(
            f"fingerprint mismatch: stats were recorded for {stats.fingerprint}, model is {expected}"
        )
    conv_ids = {c.id for c in graph.convs}
    seen = [s.layer_id for s in stats.layers]
    missing = sorted(conv_ids - set(seen))
    if missing:
        raise StatsError(f"missing layer: no statistics for conv layers {missing}")
    extra = sorted(set(seen) - conv_ids)
    if extra:
        raise StatsError(f"layers {extra} are not conv layers of the model")
    if len(seen) != len(set(seen)):
        raise StatsError("duplicate layer records")


def load_stats(document: str | Mapping[str, Any], graph: ModelGraph | None = None) -> StatsCollection:
    """Parse an ``mbs-stats/1`` document, optionally checking it against ``graph``."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"stats: not valid JSON ({exc})") from None
    else:
        doc = document
    if not isinstance(doc, Mapping):
        raise SchemaError("stats: expected an object")
    check_version(doc, "mbs-stats")
    for key in ("fingerprint", "layers"):
        if key not in doc:
            raise SchemaError(f"stats.{key}: required field missing")
    source = doc.get("source", "recorded")
    if source not in ("recorded", "simulated"):
        raise SchemaError(f"stats.source: must be 'recorded' or 'simulated', got {source!r}")
    records = []
    for pos, raw in enumerate(doc["layers"]):
        where = f"stats.layers[{pos}]"
        if not isinstance(raw, Mapping):
            raise SchemaError(f"{where}: expected an object")
        try:
            lid, p, count = raw["layer_id"], raw["p"], raw["sample_count"]
        except KeyError as exc:
            raise SchemaError(f"{where}.{exc.args[0]}: required field missing") from None
        if not isinstance(lid, int) or isinstance(lid, bool):
            raise SchemaError(f"{where}.layer_id: must be an integer")
        if not isinstance(p, (int, float)) or isinstance(p, bool) or not 0.0 <= p <= 1.0:
            raise StatsError(f"{where}.p: {p!r} outside [0, 1]")
        if not isinstance(count, int) or count < 1:
            raise SchemaError(f"{where}.sample_count: must be an integer >= 1")
        records.append(LayerStats(lid, float(p), count, raw.get("element_count")))
    stats = StatsCollection(
        model_name=str(doc.get("model_name", "")),
        fingerprint=str(doc["fingerprint"]),
        layers=tuple(records),
        source=source,
        seed=doc.get("seed"),
        provenance=str(doc.get("provenance", "")),
    )
    if graph is not None:
        check_against(stats, graph)
    return stats


def uniform_stats(graph: ModelGraph, p: float | Mapping[int, float] = 1.0, *,
                  sample_count: int = 1, provenance: str = "") -> StatsCollection:
    """A recorded-style collection with hand-picked ``p`` values."""
    lookup = p if isinstance(p, Mapping) else None
    layers = tuple(
        LayerStats(c.id, float(lookup[c.id] if lookup is not None else p), sample_count,
                   c.out_spatial**2 * c.out_channels)
        for c in graph.convs
    )
    return StatsCollection(graph.name, fingerprint(graph), layers, "recorded", None, provenance)


# --------------------------------------------------------------------------
# dense micro-inference


def _pad(total: int) -> tuple[int, int]:
    lo = total // 2
    return lo, total - lo


def _padded(x: np.ndarray, kernel: int, stride: int, out: int, padding: str,
            fill: float = 0.0) -> np.ndarray:
    if padding == "valid":
        return x
    total = max((out - 1) * stride + kernel - x.shape[-1], 0)
    lo, hi = _pad(total)
    if total == 0:
        return x
    return np.pad(x, ((0, 0), (lo, hi), (lo, hi)), constant_values=fill)


def _windows(x: np.ndarray, kernel: int, stride: int, out: int) -> np.ndarray:
    win = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    return win[:, :out, :out]


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Cross-correlate a ``(C, H, W)`` tensor; returns the pre-activation map."""
    k, s, out = layer.kernel_size, layer.stride, layer.out_spatial
    win = _windows(_padded(x, k, s, out, layer.padding), k, s, out)
    if layer.conv_kind == "depthwise":
        y = np.einsum("chwij,cij->chw", win, weight)
    else:
        y = np.tensordot(weight, win, axes=([1, 2, 3], [0, 3, 4]))
    return y + bias[:, None, None]


def pool2d(x: np.ndarray, layer: PoolLayer) -> np.ndarray:
    k, s, out = layer.window, layer.stride, layer.out_spatial
    if layer.pool_kind == "max":
        win = _windows(_padded(x, k, s, out, layer.padding, -np.inf), k, s, out)
        return win.max(axis=(3, 4))
    win = _windows(_padded(x, k, s, out, layer.padding), k, s, out)
    return win.mean(axis=(3, 4))


def join(parts: Sequence[np.ndarray], layer: JoinLayer) -> np.ndarray:
    if layer.mode == "concat":
        y = np.concatenate(parts, axis=0)
    else:
        width = max(p.shape[0] for p in parts)
        y = np.zeros((width,) + parts[0].shape[1:])
        for p in parts:
            y[: p.shape[0]] += p
    return np.maximum(y, 0.0) if layer.has_relu else y


def init_params(graph: ModelGraph, rng: np.random.Generator) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Zero-mean normal weights scaled by ``sqrt(2 / fan_in)``, zero biases."""
    params = {}
    for c in graph.convs:
        k = c.kernel_size
        if c.conv_kind == "depthwise":
            shape, fan_in = (c.out_channels, k, k), k * k
        else:
            shape, fan_in = (c.out_channels, c.in_channels, k, k), c.in_channels * k * k
        params[c.id] = (rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), np.zeros(c.out_channels))
    return params


def synthetic_images(graph: ModelGraph, n_images: int, rng: np.random.Generator) -> np.ndarray:
    L = graph.input_resolution
    return rng.standard_normal((n_images, graph.input_channels, L, L))


def forward(graph: ModelGraph, params: Mapping[int, tuple[np.ndarray, np.ndarray]],
            image: np.ndarray) -> dict[int, np.ndarray]:
    """Every node's output for one image; conv outputs are post-ReLU when ``has_relu``."""
    acts: dict[int, np.ndarray] = {INPUT: np.asarray(image, dtype=np.float64)}
    for layer in graph.layers:
        if isinstance(layer, ConvLayer):
            w, b = params[layer.id]
            y = conv2d(acts[layer.inputs[0]], w, b, layer)
            acts[layer.id] = np.maximum(y, 0.0) if layer.has_relu else y
        elif isinstance(layer, PoolLayer):
            acts[layer.id] = pool2d(acts[layer.inputs[0]], layer)
        else:
            acts[layer.id] = join([acts[i] for i in layer.inputs], layer)
    return acts


def nonzero_counts(graph: ModelGraph, params, image: np.ndarray) -> dict[int, int]:
    acts = forward(graph, params, image)
    return {c.id: int(np.count_nonzero(acts[c.id])) for c in graph.convs}


def activation_elements(graph: ModelGraph) -> int:
    shapes = tensor_shapes(graph)
    return sum(ch * sp * sp for lid, (ch, sp) in shapes.items() if lid != INPUT)


def collect_stats(graph: ModelGraph, params, images: np.ndarray, *, seed: int | None = None,
                  source: str = "simulated", workers: int = 1) -> StatsCollection:
    """Average non-zero ReLU output fraction of every conv over ``images``.

    Per-image non-zero counts are integers, so the mean of per-image
    fractions is formed exactly as ``total_nonzero / (N * elements)``
    regardless of how the images are scheduled.
    """
    n = len(images)
    if n == 0:
        raise StatsError("n_images must be >= 1")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_image = list(pool.map(lambda img: nonzero_counts(graph, params, img), images))
    else:
        per_image = [nonzero_counts(graph, params, img) for img in images]
    layers = []
    for c in graph.convs:
        elements = c.out_spatial * c.out_spatial * c.out_channels
        if c.has_relu:
            p = sum(counts[c.id] for counts in per_image) / (n * elements)
        else:
            p = 1.0
        layers.append(LayerStats(c.id, p, n, elements))
    return StatsCollection(graph.name, fingerprint(graph), tuple(layers), source, seed,
                           "synthetic images, seeded random weights" if source == "simulated" else "")


def simulate_stats(graph: ModelGraph, n_images: int, seed: int, *, budget: int = DEFAULT_BUDGET,
                   workers: int = 1) -> StatsCollection:
    """Run the seeded micro-inference engine and collect ``p`` for every conv layer."""
    if n_images < 1:
        raise StatsError("n_images must be >= 1")
    elements = activation_elements(graph)
    if elements > budget:
        raise StatsError(
            f"budget exceeded: {elements} activation elements per image > budget {budget}"
        )
    rng = np.random.default_rng(seed)
    params = init_params(graph, rng)
    images = synthetic_images(graph, n_images, rng)
    return collect_stats(graph, params, images, seed=seed, workers=workers)
