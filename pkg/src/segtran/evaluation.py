"""Class-balanced MSE/MAPE, the test protocol, and case-study export."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .decoder import DecodedGraph
from .graphs import Graph, PairedExample, select_anchors
from .model import ModelParams, translate_graph
from .numerics import no_grad
from .rng import substream


@dataclass(frozen=True)
class MetricPair:
    mse: float
    mape: float


def _arrays(pred) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pred, DecodedGraph):
        return pred.A_pred.data, pred.F_pred.data
    a, f = pred
    return np.asarray(a, dtype=np.float64), np.asarray(f, dtype=np.float64)


def _balanced(err: np.ndarray, adjacency: np.ndarray) -> float:
    """Average ``err`` over edges and over off-diagonal non-edges, 50/50.

    A class with no entries is dropped and the other gets full weight.
    """
    n = adjacency.shape[0]
    off = ~np.eye(n, dtype=bool)
    edge = (adjacency > 0) & off
    non = (adjacency == 0) & off
    parts = [err[m].mean() for m in (edge, non) if m.any()]
    if not parts:
        return 0.0
    return float(sum(parts) / len(parts))


def adjacency_weighted_mse(A_pred: np.ndarray, target: Graph) -> float:
    return _balanced((A_pred - target.adjacency) ** 2, target.adjacency)


def adjacency_weighted_mape(A_pred: np.ndarray, target: Graph) -> float:
    A = target.adjacency
    return _balanced(np.abs(A_pred - A) / np.maximum(np.abs(A), 1.0), A)


def weighted_mse(pred, target: Graph) -> float:
    """Class-balanced adjacency squared error plus mean attribute squared error."""
    A_pred, F_pred = _arrays(pred)
    F = target.attributes
    attr = float(np.mean((F_pred - F) ** 2)) if F.size else 0.0
    return adjacency_weighted_mse(A_pred, target) + attr


def weighted_mape(pred, target: Graph) -> float:
    """As :func:`weighted_mse` with |pred - target| / max(|target|, 1) per entry."""
    A_pred, F_pred = _arrays(pred)
    F = target.attributes
    attr = float(np.mean(np.abs(F_pred - F) / np.maximum(np.abs(F), 1.0))) if F.size else 0.0
    return adjacency_weighted_mape(A_pred, target) + attr


def evaluate_test(model: ModelParams, paired_test: Sequence[PairedExample], cfg: TrainConfig,
                  seed: int | None = None) -> MetricPair:
    """Translate each test source and score it against its target, averaged over the set.

    Anchors come from a stream keyed on ``seed`` (default ``cfg.seed``), so
    repeated calls give identical numbers.
    """
    if not paired_test:
        raise ValueError("evaluate_test needs at least one test pair")
    rng = substream(cfg.seed if seed is None else seed, "eval", "anchors")
    mses, mapes = [], []
    with no_grad():
        for ex in paired_test:
            dec = translate_graph(ex.source, select_anchors(ex.source, cfg.k, rng), model, cfg)
            mses.append(weighted_mse(dec, ex.target))
            mapes.append(weighted_mape(dec, ex.target))
    return MetricPair(float(np.mean(mses)), float(np.mean(mapes)))


# --- case study ----------------------------------------------------------------------

CONFIDENT = 0.2
FAINT = 0.05


def edge_bucket(prob: float, in_target: bool) -> str | None:
    """Bucket for one predicted edge.

    Above 0.2 the edge is confident (``true`` if present in the target,
    else ``false``); in [0.05, 0.2] it is ``faint``; below 0.05 it is
    omitted.  Exactly 0.2 counts as faint.
    """
    if prob > CONFIDENT:
        return "true" if in_target else "false"
    if prob >= FAINT:
        return "faint"
    return None


_COLORS = {"true": "black", "false": "red", "faint": "grey"}


def _dot(name: str, n: int, edges: list[tuple[int, int, dict]]) -> str:
    lines = [f"graph {name} {{", "  node [shape=circle];"]
    lines += [f"  {i};" for i in range(n)]
    for i, j, attrs in edges:
        extra = ", ".join(f'{k}="{v}"' for k, v in attrs.items())
        lines.append(f"  {i} -- {j}" + (f" [{extra}]" if extra else "") + ";")
    lines.append("}")
    return "\n".join(lines) + "\n"


def case_study_buckets(A_pred: np.ndarray, target: Graph) -> dict[str, list[list]]:
    out = {"true": [], "false": [], "faint": [], "omitted": []}
    n = target.n
    for i in range(n):
        for j in range(i + 1, n):
            # the prediction need not be symmetric; use the stronger direction
            p = float(max(A_pred[i, j], A_pred[j, i]))
            b = edge_bucket(p, target.adjacency[i, j] > 0)
            out[b or "omitted"].append([i, j, p])
    return out


def export_case_study(model: ModelParams, pair: PairedExample, path, cfg: TrainConfig,
                      seed: int | None = None) -> dict[str, list[list]]:
    """Write source/target/predicted DOT files and a probabilities sidecar into ``path``."""
    os.makedirs(path, exist_ok=True)
    rng = substream(cfg.seed if seed is None else seed, "case_study", "anchors")
    anchors = select_anchors(pair.source, cfg.k, rng)
    with no_grad():
        dec = translate_graph(pair.source, anchors, model, cfg)
    A_pred = dec.A_pred.data
    buckets = case_study_buckets(A_pred, pair.target)
    n = pair.target.n
    with open(os.path.join(path, "source.dot"), "w") as fh:
        fh.write(_dot("source", n, [(i, j, {}) for i, j in pair.source.edges()]))
    with open(os.path.join(path, "target.dot"), "w") as fh:
        fh.write(_dot("target", n, [(i, j, {}) for i, j in pair.target.edges()]))
    pred_edges = []
    for kind in ("true", "false", "faint"):
        for i, j, p in buckets[kind]:
            pred_edges.append((i, j, {"color": _COLORS[kind], "label": f"{p:.3f}"}))
    pred_edges.sort(key=lambda e: (e[0], e[1]))
    with open(os.path.join(path, "predicted.dot"), "w") as fh:
        fh.write(_dot("predicted", n, pred_edges))
    sidecar = {
        "anchors": anchors,
        "thresholds": {"confident": CONFIDENT, "faint": FAINT},
        "probabilities": A_pred.tolist(),
        "buckets": buckets,
    }
    with open(os.path.join(path, "probabilities.json"), "w") as fh:
        json.dump(sidecar, fh, indent=1)
        fh.write("\n")
    return buckets
