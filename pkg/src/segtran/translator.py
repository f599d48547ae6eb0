"""Latent-space translator, paired translation loss, and the JSD mutual-information estimator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass
class TranslatorParams:
    """Node-wise MLP on concat(H_v, P_v, readout).  No layers means identity."""

    layers: list[dict[str, Tensor]] = field(default_factory=list)
    d_h: int = 0
    d_p: int = 0
    readout: str = "mean"

    @property
    def is_identity(self) -> bool:
        return not self.layers

    def named_parameters(self, prefix: str = "trans") -> dict[str, Tensor]:
        return {f"{prefix}.layer{i}.{k}": t for i, lyr in enumerate(self.layers) for k, t in lyr.items()}


@dataclass
class MIEstimatorParams:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    def named_parameters(self, prefix: str = "mi") -> dict[str, Tensor]:
        return {f"{prefix}.W1": self.W1, f"{prefix}.b1": self.b1, f"{prefix}.W2": self.W2, f"{prefix}.b2": self.b2}


def _mlp_layers(widths: Sequence[int], rng) -> list[dict[str, Tensor]]:
    return [
        {"W": nx.parameter(nx.glorot(rng, a, b)), "b": nx.parameter(np.zeros(b))}
        for a, b in zip(widths[:-1], widths[1:])
    ]


def translator_param_init(d_h: int, d_p: int, rng: np.random.Generator, hidden: int = 64,
                          readout: str = "mean") -> TranslatorParams:
    width = d_h + d_p
    return TranslatorParams(_mlp_layers([2 * width, hidden, hidden, width], rng), d_h, d_p, readout)


def identity_translator(d_h: int, d_p: int) -> TranslatorParams:
    return TranslatorParams([], d_h, d_p)


def mi_param_init(width: int, rng: np.random.Generator, hidden: int = 64) -> MIEstimatorParams:
    (l1, l2) = _mlp_layers([2 * width, hidden, 1], rng)
    return MIEstimatorParams(l1["W"], l1["b"], l2["W"], l2["b"])


def readout(H: Tensor, P: Tensor, mode: str = "mean") -> Tensor:
    """Graph-level vector (1×(d_H+d_P)) pooled over node rows."""
    if H.shape[0] != P.shape[0]:
        raise ValueError(f"readout: row counts differ ({H.shape[0]} vs {P.shape[0]})")
    if H.shape[0] == 0:
        raise ValueError("readout of a zero-node graph")
    g = nx.mean_rows(nx.concat([H, P]))
    if mode == "sum":
        return g * float(H.shape[0])
    if mode != "mean":
        raise ValueError(f"unknown readout {mode!r}")
    return g


def translate(H: Tensor, P: Tensor, params: TranslatorParams) -> tuple[Tensor, Tensor]:
    if params.is_identity:
        return H, P
    if H.shape[1] != params.d_h or P.shape[1] != params.d_p:
        raise ValueError(
            f"translate: widths ({H.shape[1]}, {P.shape[1]}) != ({params.d_h}, {params.d_p})"
        )
    n = H.shape[0]
    x = nx.concat([H, P, nx.tile_rows(readout(H, P, params.readout), n)])
    last = len(params.layers) - 1
    for i, lyr in enumerate(params.layers):
        x = nx.linear(x, lyr["W"], lyr["b"], activation="relu" if i < last else None)
    d_h = params.d_h
    return nx.slice_cols(x, 0, d_h), nx.slice_cols(x, d_h, d_h + params.d_p)


def translation_loss(pred: tuple[Tensor, Tensor], target: tuple[Tensor, Tensor]) -> Tensor:
    """Mean squared difference on H plus the same on P."""
    (hp, pp), (ht, pt) = pred, target
    if hp.shape != ht.shape or pp.shape != pt.shape:
        raise ValueError(
            f"translation_loss: shapes {hp.shape}/{pp.shape} vs {ht.shape}/{pt.shape}"
        )
    return nx.sq_error(hp, ht, scale=1.0 / hp.size) + nx.sq_error(pp, pt, scale=1.0 / pp.size)


def discriminator(x: Tensor, params: MIEstimatorParams) -> Tensor:
    return nx.linear(nx.linear(x, params.W1, params.b1, activation="relu"), params.W2, params.b2)


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation with no fixed points (rejection sampling)."""
    if n < 2:
        raise ValueError("a derangement needs at least 2 elements")
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm


def mi_objective(pairs: Sequence[tuple[Tensor, Tensor]], params: MIEstimatorParams,
                 rng: np.random.Generator, perm: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Jensen-Shannon MI estimate between paired global vectors.

    Positives are the given (g_s, g_t) pairs; negatives re-pair each g_s with
    a deranged g_t from the same batch.  Returns ``(estimator_loss, mi_score)``
    with ``estimator_loss = -mi_score``.
    """
    if len(pairs) < 2:
        raise ValueError(f"MI estimation needs a batch of at least 2 pairs, got {len(pairs)}")
    gs = nx.concat([a for a, _ in pairs], axis=0)
    gt = nx.concat([b for _, b in pairs], axis=0)
    if perm is None:
        perm = derangement(len(pairs), rng)
    pos = discriminator(nx.concat([gs, gt]), params)
    neg = discriminator(nx.concat([gs, nx.take_rows(gt, perm)]), params)
    mi = nx.mean_all(-nx.softplus(-pos)) - nx.mean_all(nx.softplus(neg))
    return -mi, mi


def discriminator_scores(pairs, params: MIEstimatorParams, perm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw scores on matched pairs and on pairs re-matched by ``perm`` (no tape)."""
    gs = np.concatenate([np.asarray(a.data if isinstance(a, Tensor) else a).reshape(1, -1) for a, _ in pairs])
    gt = np.concatenate([np.asarray(b.data if isinstance(b, Tensor) else b).reshape(1, -1) for _, b in pairs])
    pos = discriminator(nx.constant(np.hstack([gs, gt])), params).data.ravel()
    neg = discriminator(nx.constant(np.hstack([gs, gt[perm]])), params).data.ravel()
    return pos, neg
