"""Two-stream message-passing encoder with skip connections.

Each block updates a feature stream and a position stream in parallel:

    h_v <- concat(relu(W_F · concat(h_v, agg_v(H)) + b_F), F_v)
    p_v <- concat(relu(W_P · concat(p_v, agg_v(P)) + b_P), Pos_v)

where ``agg`` is the neighbour mean (default) or sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .graphs import Graph, PositionEmbedding
from .numerics import Tensor


@dataclass
class EncoderParams:
    blocks: list[dict[str, Tensor]]
    d_f: int
    k: int
    d_hidden: int
    aggregation: str = "mean"

    @property
    def d_h(self) -> int:
        return self.d_hidden + self.d_f

    @property
    def d_p(self) -> int:
        return self.d_hidden + self.k

    def named_parameters(self, prefix: str = "enc") -> dict[str, Tensor]:
        out = {}
        for i, blk in enumerate(self.blocks):
            for key, t in blk.items():
                out[f"{prefix}.block{i}.{key}"] = t
        return out


@dataclass
class NodeEmbeddings:
    H: Tensor
    P: Tensor


def encoder_param_init(d_f: int, k: int, d_hidden: int, n_layers: int, rng: np.random.Generator,
                       aggregation: str = "mean") -> EncoderParams:
    if n_layers < 1 or min(d_f, k, d_hidden) < 1:
        raise ValueError("encoder needs n_layers >= 1 and positive widths")
    blocks = []
    in_f, in_p = d_f, k
    for _ in range(n_layers):
        blocks.append({
            "W_F": nx.parameter(nx.glorot(rng, 2 * in_f, d_hidden)),
            "b_F": nx.parameter(np.zeros(d_hidden)),
            "W_P": nx.parameter(nx.glorot(rng, 2 * in_p, d_hidden)),
            "b_P": nx.parameter(np.zeros(d_hidden)),
        })
        in_f, in_p = d_hidden + d_f, d_hidden + k
    return EncoderParams(blocks, d_f, k, d_hidden, aggregation)


def aggregation_matrix(adjacency: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Row v of the result averages (or sums) the rows of v's neighbours.

    Isolated nodes get a zero row.
    """
    if mode == "sum":
        return adjacency
    if mode != "mean":
        raise ValueError(f"unknown aggregation {mode!r}")
    deg = adjacency.sum(axis=1, keepdims=True)
    return np.divide(adjacency, deg, out=np.zeros_like(adjacency), where=deg > 0)


def encode(g: Graph, pos, params: EncoderParams) -> NodeEmbeddings:
    pos_vals = pos.values if isinstance(pos, PositionEmbedding) else np.asarray(pos, dtype=np.float64)
    if g.d_f != params.d_f:
        raise ValueError(f"graph attribute width {g.d_f} != encoder d_F {params.d_f}")
    if pos_vals.shape != (g.n, params.k):
        raise ValueError(f"position input shape {pos_vals.shape} != ({g.n}, {params.k})")
    agg = g.derived(("aggregation", params.aggregation),
                    lambda: aggregation_matrix(g.adjacency, params.aggregation))
    f0 = nx.constant(g.attributes)
    p0 = nx.constant(pos_vals)
    h, p = f0, p0
    for blk in params.blocks:
        h = nx.message_passing_block(h, agg, blk["W_F"], blk["b_F"], f0)
        p = nx.message_passing_block(p, agg, blk["W_P"], blk["b_P"], p0)
    return NodeEmbeddings(h, p)


def encode_reference(g: Graph, pos, params: EncoderParams) -> NodeEmbeddings:
    """Same computation as :func:`encode` composed from primitive ops."""
    pos_vals = pos.values if isinstance(pos, PositionEmbedding) else np.asarray(pos, dtype=np.float64)
    agg = nx.constant(aggregation_matrix(g.adjacency, params.aggregation))
    f0 = nx.constant(g.attributes)
    p0 = nx.constant(pos_vals)
    h, p = f0, p0
    for blk in params.blocks:
        h = nx.concat([nx.relu(nx.linear(nx.concat([h, agg @ h]), blk["W_F"], blk["b_F"])), f0])
        p = nx.concat([nx.relu(nx.linear(nx.concat([p, agg @ p]), blk["W_P"], blk["b_P"])), p0])
    return NodeEmbeddings(h, p)
