"""Full model state, ablation variants, and the per-graph forward paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import TrainConfig
from .decoder import DecodedGraph, DecoderParams, decode, decoder_param_init, reconstruction_loss
from .encoder import EncoderParams, NodeEmbeddings, encode, encoder_param_init
from .graphs import Graph, position_embedding
from .numerics import Tensor
from .translator import (
    MIEstimatorParams,
    TranslatorParams,
    identity_translator,
    mi_param_init,
    readout,
    translate,
    translator_param_init,
)


@dataclass
class ModelParams:
    enc_s: EncoderParams
    enc_t: EncoderParams
    dec_s: DecoderParams
    dec_t: DecoderParams
    trans: TranslatorParams
    mi: MIEstimatorParams | None
    cfg: TrainConfig | None = None
    d_f: int = 0

    @property
    def d_h(self) -> int:
        return self.enc_s.d_h

    @property
    def d_p(self) -> int:
        return self.enc_s.d_p

    def autoencoder_parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.enc_s.named_parameters("enc_s"))
        out.update(self.enc_t.named_parameters("enc_t"))
        out.update(self.dec_s.named_parameters("dec_s"))
        out.update(self.dec_t.named_parameters("dec_t"))
        return out

    def translator_parameters(self) -> dict[str, Tensor]:
        return self.trans.named_parameters("trans")

    def mi_parameters(self) -> dict[str, Tensor]:
        return self.mi.named_parameters("mi") if self.mi is not None else {}

    def model_parameters(self) -> dict[str, Tensor]:
        """Everything except the MI estimator."""
        out = self.autoencoder_parameters()
        out.update(self.translator_parameters())
        return out

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.model_parameters()
        out.update(self.mi_parameters())
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.named_parameters().items()}

    def load_state_arrays(self, arrays) -> None:
        for name, t in self.named_parameters().items():
            if name not in arrays:
                raise KeyError(f"checkpoint has no parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"parameter {name!r}: checkpoint shape {arr.shape} != {t.shape}")
            t.data[...] = arr

    def copy(self) -> ModelParams:
        twin = build_model_like(self)
        twin.load_state_arrays(self.state_arrays())
        return twin


def build_model(cfg: TrainConfig, d_f: int, rng: np.random.Generator | None = None) -> ModelParams:
    """Glorot-initialised model for attribute width ``d_f``, then ablated per ``cfg``."""
    from .rng import substream

    rng = rng if rng is not None else substream(cfg.seed, "init")
    enc_s = encoder_param_init(d_f, cfg.k, cfg.d_hidden, cfg.enc_layers, rng, cfg.aggregation)
    enc_t = encoder_param_init(d_f, cfg.k, cfg.d_hidden, cfg.enc_layers, rng, cfg.aggregation)
    d_h, d_p = enc_s.d_h, enc_s.d_p
    dec_args = dict(n_blocks=cfg.blocks, heads=cfg.heads, d_k=cfg.d_k, d_v=cfg.d_v,
                    mlp_hidden=cfg.mlp_hidden, link=cfg.link_activation)
    dec_s = decoder_param_init(d_h, d_p, d_f, rng, **dec_args)
    dec_t = decoder_param_init(d_h, d_p, d_f, rng, **dec_args)
    trans = translator_param_init(d_h, d_p, rng, cfg.trans_hidden, cfg.readout)
    mi = mi_param_init(d_h + d_p, rng, cfg.mi_hidden)
    model = ModelParams(enc_s, enc_t, dec_s, dec_t, trans, mi, cfg, d_f)
    return apply_ablation(model, cfg)


def build_model_like(model: ModelParams) -> ModelParams:
    return build_model(model.cfg, model.d_f, np.random.default_rng(0))


def apply_ablation(model: ModelParams, cfg: TrainConfig) -> ModelParams:
    """Strip the components an ablation removes.

    shared_embedding drops the translator (identity) and the MI estimator;
    no_mi drops the MI estimator; no_attention drops the decoder attention
    blocks.  no_position only changes the encoder input and is handled in
    :func:`position_input`.
    """
    if cfg.shared_embedding:
        if model.enc_s.d_h != model.enc_t.d_h or model.enc_s.d_p != model.enc_t.d_p:
            raise ValueError("identity translator needs equal embedding widths in both domains")
        model.trans = identity_translator(model.d_h, model.d_p)
    if cfg.shared_embedding or cfg.no_mi:
        model.mi = None
    if cfg.no_attention:
        model.dec_s.blocks = []
        model.dec_t.blocks = []
    return model


def position_input(g: Graph, anchors, cfg: TrainConfig) -> np.ndarray:
    if cfg.no_position:
        f = g.attributes[:, : cfg.k]
        if f.shape[1] < cfg.k:
            f = np.hstack([f, np.zeros((g.n, cfg.k - f.shape[1]))])
        return f
    return position_embedding(g, anchors, cfg.position_transform).values


def embed(g: Graph, anchors, enc: EncoderParams, cfg: TrainConfig) -> NodeEmbeddings:
    return encode(g, position_input(g, anchors, cfg), enc)


def reconstruct(g: Graph, emb: NodeEmbeddings, dec: DecoderParams, cfg: TrainConfig) -> Tensor:
    return reconstruction_loss(g, decode(emb, dec), cfg.delta)


def global_pair(emb_s: NodeEmbeddings, model: ModelParams, cfg: TrainConfig) -> tuple[Tensor, Tensor]:
    """(g_s, g_t_pred) for one source graph's embeddings."""
    h_pred, p_pred = translate(emb_s.H, emb_s.P, model.trans)
    return readout(emb_s.H, emb_s.P, cfg.readout), readout(h_pred, p_pred, cfg.readout)


def translate_graph(g: Graph, anchors, model: ModelParams, cfg: TrainConfig) -> DecodedGraph:
    """Source graph -> source encoder -> translator -> target decoder."""
    emb = embed(g, anchors, model.enc_s, cfg)
    h, p = translate(emb.H, emb.P, model.trans)
    return decode(NodeEmbeddings(h, p), model.dec_t)
