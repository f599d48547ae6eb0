"""Graph data model, BA generation, reachability targets, anchors and datasets."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .rng import substream


class GraphFormatError(ValueError):
    pass


class GraphValidationError(ValueError):
    pass


@dataclass(eq=False)
class Graph:
    """Undirected simple graph with a dense 0/1 adjacency and node attributes."""

    adjacency: np.ndarray
    attributes: np.ndarray
    _hops: np.ndarray | None = field(default=None, repr=False)
    _derived: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        f = np.asarray(self.attributes, dtype=np.float64)
        if f.ndim == 1:
            f = f.reshape(-1, 1) if f.size else f.reshape(a.shape[0], 0)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphValidationError(f"adjacency must be square, got shape {a.shape}")
        if not np.array_equal(a, a.T):
            raise GraphValidationError("adjacency is not symmetric")
        if not np.all((a == 0) | (a == 1)):
            raise GraphValidationError("adjacency is not binary")
        if np.any(np.diag(a) != 0):
            raise GraphValidationError("adjacency has self-loops")
        if f.ndim != 2 or f.shape[0] != a.shape[0]:
            raise GraphValidationError(
                f"attributes have {f.shape[0] if f.ndim else 0} rows, expected {a.shape[0]}"
            )
        self.adjacency = a
        self.attributes = f

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d_f(self) -> int:
        return self.attributes.shape[1]

    @property
    def hops(self) -> np.ndarray:
        """All-pairs hop distances (int64, -1 where unreachable); cached."""
        if self._hops is None:
            self._hops = kernels.hop_distances(self.adjacency)
        return self._hops

    def derived(self, key, compute):
        """Memoise a quantity computed from this (immutable) graph."""
        if key not in self._derived:
            self._derived[key] = compute()
        return self._derived[key]

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(a), int(b)) for a, b in zip(i, j)]

    def num_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def same_as(self, other: Graph) -> bool:
        return np.array_equal(self.adjacency, other.adjacency) and np.array_equal(
            self.attributes, other.attributes
        )


@dataclass(eq=False)
class PairedExample:
    source: Graph
    target: Graph

    def __post_init__(self):
        if self.source.n != self.target.n:
            raise GraphValidationError(
                f"paired graphs must share the node set: {self.source.n} vs {self.target.n} nodes"
            )


@dataclass(eq=False)
class Dataset:
    paired_train: list[PairedExample] = field(default_factory=list)
    unpaired_source: list[Graph] = field(default_factory=list)
    unpaired_target: list[Graph] = field(default_factory=list)
    paired_test: list[PairedExample] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        return {
            "paired_train": len(self.paired_train),
            "unpaired_source": len(self.unpaired_source),
            "unpaired_target": len(self.unpaired_target),
            "paired_test": len(self.paired_test),
        }


@dataclass
class PositionEmbedding:
    values: np.ndarray
    anchors: list[int]


def from_edges(n: int, edges: Iterable[Sequence[int]], attributes=None) -> Graph:
    a = np.zeros((n, n))
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    if attributes is None:
        attributes = a.copy()
    return Graph(a, attributes)


# --- generation ---------------------------------------------------------------


def generate_ba(n: int, rng: np.random.Generator) -> Graph:
    """Preferential-attachment tree: each new node links to one existing node
    chosen with probability proportional to its current degree.

    Attributes are a copy of the adjacency matrix.
    """
    if n < 2:
        raise ValueError(f"BA generation needs n >= 2, got {n}")
    a = np.zeros((n, n))
    a[0, 1] = a[1, 0] = 1.0
    # every edge endpoint listed once: uniform draw from it is degree-proportional
    endpoints = [0, 1]
    for v in range(2, n):
        u = endpoints[int(rng.integers(len(endpoints)))]
        a[u, v] = a[v, u] = 1.0
        endpoints.extend((u, v))
    return Graph(a, a.copy())


def k_hop_reachability(g: Graph, k: int = 2) -> Graph:
    """Graph whose edges join every pair within ``k`` hops of each other in ``g``.

    Attributes are copied from ``g``.
    """
    if k < 1:
        raise ValueError(f"hop count must be >= 1, got {k}")
    h = g.hops
    a = ((h >= 1) & (h <= k)).astype(np.float64)
    return Graph(a, g.attributes.copy())


def select_anchors(g: Graph, k: int, rng: np.random.Generator) -> list[int]:
    """``min(k, n)`` distinct nodes, padded by repeating the last one to width ``k``."""
    if k < 1:
        raise ValueError(f"anchor count must be >= 1, got {k}")
    if g.n == 0:
        raise ValueError("cannot select anchors in an empty graph")
    picked = [int(x) for x in rng.choice(g.n, size=min(k, g.n), replace=False)]
    picked.extend([picked[-1]] * (k - len(picked)))
    return picked


def position_embedding(g: Graph, anchors: Sequence[int], transform: str = "reciprocal") -> PositionEmbedding:
    """Hop distance of every node to every anchor.

    ``reciprocal`` stores 1/(d+1) with 0 for unreachable nodes; ``raw``
    stores d with unreachable nodes set to n.
    """
    anchors = [int(x) for x in anchors]
    if any(not 0 <= x < g.n for x in anchors):
        raise ValueError(f"anchor index out of range for n={g.n}: {anchors}")
    d = g.hops[:, anchors]
    if transform == "reciprocal":
        vals = np.where(d >= 0, 1.0 / np.maximum(d + 1.0, 1.0), 0.0)
    elif transform == "raw":
        vals = np.where(d >= 0, d, g.n).astype(np.float64)
    else:
        raise ValueError(f"unknown position transform {transform!r}")
    return PositionEmbedding(vals, anchors)


# --- datasets -----------------------------------------------------------------

PARTITIONS = ("paired_train", "unpaired_source", "unpaired_target", "paired_test")


def _partition_graphs(seed: int, tag: str, count: int, n_nodes: int, hops: int):
    for i in range(count):
        rng = substream(seed, "dataset", tag, i)
        src = generate_ba(n_nodes, rng)
        yield src, k_hop_reachability(src, hops)


def build_ba_dataset(counts: dict[str, int], n_nodes: int = 40, seed: int = 0, hops: int = 2) -> Dataset:
    """BA source graphs with k-hop reachability targets.

    Every graph draws from its own stream keyed by (seed, partition, index),
    so partitions are disjoint and a partition can be resized without
    changing the graphs it already had.
    """
    for key in PARTITIONS:
        if counts.get(key, 0) < 0:
            raise ValueError(f"negative count for {key}")
    unknown = set(counts) - set(PARTITIONS)
    if unknown:
        raise ValueError(f"unknown dataset partitions {sorted(unknown)}")
    ds = Dataset()
    ds.paired_train = [
        PairedExample(s, t) for s, t in _partition_graphs(seed, "paired_train", counts.get("paired_train", 0), n_nodes, hops)
    ]
    ds.unpaired_source = [
        s for s, _ in _partition_graphs(seed, "unpaired_source", counts.get("unpaired_source", 0), n_nodes, hops)
    ]
    ds.unpaired_target = [
        t for _, t in _partition_graphs(seed, "unpaired_target", counts.get("unpaired_target", 0), n_nodes, hops)
    ]
    ds.paired_test = [
        PairedExample(s, t) for s, t in _partition_graphs(seed, "paired_test", counts.get("paired_test", 0), n_nodes, hops)
    ]
    return ds


# --- serialization ----------------------------------------------------------------


def graph_to_obj(g: Graph) -> dict:
    return {
        "n": g.n,
        "edges": [[i, j] for i, j in g.edges()],
        "attributes": g.attributes.tolist(),
    }


def graph_from_obj(obj, where: str = "graph") -> Graph:
    if not isinstance(obj, dict):
        raise GraphFormatError(f"{where}: expected an object, got {type(obj).__name__}")
    for key in ("n", "edges", "attributes"):
        if key not in obj:
            raise GraphFormatError(f"{where}: missing field {key!r}")
    n = obj["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 0:
        raise GraphFormatError(f"{where}.n: expected a non-negative integer, got {n!r}")
    a = np.zeros((n, n))
    if not isinstance(obj["edges"], list):
        raise GraphFormatError(f"{where}.edges: expected a list")
    for e_idx, e in enumerate(obj["edges"]):
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(x, int) and not isinstance(x, bool) for x in e)):
            raise GraphFormatError(f"{where}.edges[{e_idx}]: expected an [i, j] integer pair, got {e!r}")
        i, j = e
        if not (0 <= i < n and 0 <= j < n):
            raise GraphValidationError(f"{where}.edges[{e_idx}]: index out of range for n={n}: {e}")
        if i == j:
            raise GraphValidationError(f"{where}.edges[{e_idx}]: self-loop on node {i}")
        a[i, j] = a[j, i] = 1.0
    attrs = obj["attributes"]
    if not isinstance(attrs, list) or len(attrs) != n:
        raise GraphFormatError(f"{where}.attributes: expected {n} rows")
    widths = {len(r) if isinstance(r, list) else -1 for r in attrs}
    if -1 in widths or len(widths) > 1:
        raise GraphFormatError(f"{where}.attributes: rows must be equal-length lists")
    try:
        f = np.array(attrs, dtype=np.float64).reshape(n, widths.pop() if widths else 0)
    except (TypeError, ValueError) as exc:
        raise GraphFormatError(f"{where}.attributes: {exc}") from None
    return Graph(a, f)


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def save_graph(g: Graph, path) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_obj(g), fh)
        fh.write("\n")


def load_graph(path) -> Graph:
    return graph_from_obj(_read_json(path), where=str(path))


def save_graphs(graphs: Sequence[Graph], path) -> None:
    """Write a list of graph objects to one file."""
    with open(path, "w") as fh:
        json.dump([graph_to_obj(g) for g in graphs], fh)
        fh.write("\n")


def load_graphs(path) -> list[Graph]:
    """Read one file holding either a graph object or a list of them."""
    obj = _read_json(path)
    if isinstance(obj, list):
        return [graph_from_obj(o, where=f"{path}[{i}]") for i, o in enumerate(obj)]
    return [graph_from_obj(obj, where=str(path))]


def save_dataset(ds: Dataset, root, meta: dict | None = None) -> None:
    root = Path(root)
    for part in PARTITIONS:
        (root / part).mkdir(parents=True, exist_ok=True)
    # fixed-width indices so lexicographic order is index order
    w = max(3, len(str(max(ds.counts().values(), default=1) - 1)))
    for i, ex in enumerate(ds.paired_train):
        save_graph(ex.source, root / "paired_train" / f"{i:0{w}d}_source.json")
        save_graph(ex.target, root / "paired_train" / f"{i:0{w}d}_target.json")
    for i, g in enumerate(ds.unpaired_source):
        save_graph(g, root / "unpaired_source" / f"{i:0{w}d}.json")
    for i, g in enumerate(ds.unpaired_target):
        save_graph(g, root / "unpaired_target" / f"{i:0{w}d}.json")
    for i, ex in enumerate(ds.paired_test):
        save_graph(ex.source, root / "paired_test" / f"{i:0{w}d}_source.json")
        save_graph(ex.target, root / "paired_test" / f"{i:0{w}d}_target.json")
    manifest = {"counts": ds.counts()}
    manifest.update(meta or {})
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _paired(folder: Path) -> list[PairedExample]:
    out = []
    for src in sorted(folder.glob("*_source.json")):
        tgt = src.with_name(src.name.replace("_source.json", "_target.json"))
        if not tgt.exists():
            raise GraphFormatError(f"{src}: missing partner {tgt.name}")
        out.append(PairedExample(load_graph(src), load_graph(tgt)))
    return out


def load_dataset(root) -> Dataset:
    root = Path(root)
    if not (root / "manifest.json").exists():
        raise GraphFormatError(f"{root}: no manifest.json")
    ds = Dataset()
    ds.paired_train = _paired(root / "paired_train")
    ds.unpaired_source = [load_graph(p) for p in sorted((root / "unpaired_source").glob("*.json"))]
    ds.unpaired_target = [load_graph(p) for p in sorted((root / "unpaired_target").glob("*.json"))]
    ds.paired_test = _paired(root / "paired_test")
    return ds


def read_dataset_manifest(root) -> dict:
    with open(os.path.join(root, "manifest.json")) as fh:
        return json.load(fh)
