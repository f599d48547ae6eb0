"""Attention-fused decoder: link prediction, attribute prediction, weighted reconstruction loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoder import NodeEmbeddings
from .graphs import Graph
from .numerics import Tensor


@dataclass
class DecoderParams:
    blocks: list[dict[str, Tensor]]
    S: Tensor
    mlp: dict[str, Tensor]
    d_h: int
    d_p: int
    d_f: int
    link: str = "sigmoid"

    def named_parameters(self, prefix: str = "dec") -> dict[str, Tensor]:
        out = {}
        for i, blk in enumerate(self.blocks):
            for key, t in blk.items():
                out[f"{prefix}.block{i}.{key}"] = t
        out[f"{prefix}.S"] = self.S
        for key, t in self.mlp.items():
            out[f"{prefix}.mlp.{key}"] = t
        return out


@dataclass
class DecodedGraph:
    A_pred: Tensor
    F_pred: Tensor


def decoder_param_init(d_h: int, d_p: int, d_f: int, rng: np.random.Generator, n_blocks: int = 2,
                       heads: int = 4, d_k: int = 16, d_v: int = 16, mlp_hidden: int = 32,
                       link: str = "sigmoid") -> DecoderParams:
    blocks = []
    for _ in range(n_blocks):
        blocks.append({
            "W_Q": nx.parameter(nx.glorot(rng, d_p, d_k, (heads, d_p, d_k))),
            "W_K": nx.parameter(nx.glorot(rng, d_p, d_k, (heads, d_p, d_k))),
            "W_V": nx.parameter(nx.glorot(rng, d_h, d_v, (heads, d_h, d_v))),
            "W_O": nx.parameter(nx.glorot(rng, heads * d_v, d_h)),
        })
    width = d_h + d_p
    S = nx.parameter(nx.glorot(rng, width, width))
    mlp = {
        "W1": nx.parameter(nx.glorot(rng, width, mlp_hidden)),
        "b1": nx.parameter(np.zeros(mlp_hidden)),
        "W2": nx.parameter(nx.glorot(rng, mlp_hidden, d_f)),
        "b2": nx.parameter(np.zeros(d_f)),
    }
    return DecoderParams(blocks, S, mlp, d_h, d_p, d_f, link)


def attention_block(P: Tensor, H: Tensor, block: dict[str, Tensor], label: str = "attention block",
                    return_weights: bool = False):
    return nx.multihead_attention(P, H, block["W_Q"], block["W_K"], block["W_V"], block["W_O"],
                                  return_weights=return_weights, label=label)


def fuse(P: Tensor, H: Tensor, params: DecoderParams) -> Tensor:
    """Run the attention blocks in sequence; P stays fixed, H is replaced each block."""
    for i, blk in enumerate(params.blocks):
        H = attention_block(P, H, blk, label=f"attention block {i}")
    return H


def predict_adjacency(H_O: Tensor, P: Tensor, S: Tensor, link: str = "sigmoid") -> Tensor:
    return _link(nx.concat([H_O, P]), S, link)


def _link(E: Tensor, S: Tensor, link: str) -> Tensor:
    probs = nx.sigmoid(nx.bilinear(E, S))
    if link == "softmax":
        return nx.row_softmax(probs)
    if link != "sigmoid":
        raise ValueError(f"unknown link activation {link!r}")
    return probs


def predict_attributes(H_O: Tensor, P: Tensor, mlp: dict[str, Tensor]) -> Tensor:
    return _attributes(nx.concat([H_O, P]), mlp)


def _attributes(E: Tensor, mlp: dict[str, Tensor]) -> Tensor:
    hidden = nx.linear(E, mlp["W1"], mlp["b1"], activation="relu")
    return nx.linear(hidden, mlp["W2"], mlp["b2"])


def decode(emb: NodeEmbeddings, params: DecoderParams) -> DecodedGraph:
    # an ablated decoder has no blocks, which leaves H_O = H
    H_O = fuse(emb.P, emb.H, params)
    E = nx.concat([H_O, emb.P])
    return DecodedGraph(_link(E, params.S, params.link), _attributes(E, params.mlp))


def edge_weight_mask(A: np.ndarray, delta: float) -> np.ndarray:
    """1 on edges, ``delta`` on every other entry (diagonal included)."""
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    return np.where(np.asarray(A) > 0, 1.0, delta)


def reconstruction_loss(g: Graph, dec: DecodedGraph, delta: float) -> Tensor:
    """Masked squared error on adjacency plus squared error on attributes,
    each divided by its element count."""
    n = g.n
    mask = edge_weight_mask(g.adjacency, delta)
    adj_err = nx.sq_error(dec.A_pred, g.adjacency, mask, scale=1.0 / (n * n))
    attr_err = nx.sq_error(dec.F_pred, g.attributes, scale=1.0 / max(g.attributes.size, 1))
    return adj_err + attr_err
