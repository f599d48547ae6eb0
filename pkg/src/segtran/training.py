"""Four-phase training schedule and the combined objective.

Phases, in order: autoencoder pretraining on reconstruction, translator
training on frozen embeddings, MI-estimator pretraining on frozen
translations, then alternating paired / unpaired fine-tuning.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from itertools import zip_longest
from typing import Callable, Iterator, Sequence

import numpy as np

from . import numerics as nx
from .config import TrainConfig, apply_overrides
from .graphs import Dataset, Graph, PairedExample, select_anchors
from .model import ModelParams, build_model, embed, global_pair, reconstruct
from .numerics import Adam, Tape, Tensor, no_grad
from .rng import get_state, set_state, substream
from .translator import derangement, mi_objective, translate, translation_loss

log = logging.getLogger(__name__)

COMPONENTS = ("L_rec_s", "L_rec_t", "L_trans", "L_MI", "total")
CSV_COLUMNS = ("phase", "epoch") + COMPONENTS


@dataclass
class EpochRecord:
    phase: str
    epoch: int
    L_rec_s: float = 0.0
    L_rec_t: float = 0.0
    L_trans: float = 0.0
    L_MI: float = 0.0
    total: float = 0.0

    def row(self) -> list:
        return [self.phase, self.epoch] + [getattr(self, c) for c in COMPONENTS]


@dataclass
class RunReport:
    records: list[EpochRecord] = field(default_factory=list)
    final: dict[str, float] = field(default_factory=dict)
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)

    def phase(self, name: str) -> list[EpochRecord]:
        return [r for r in self.records if r.phase == name]

    def column(self, name: str, phase: str | None = None) -> list[float]:
        recs = self.records if phase is None else self.phase(phase)
        return [getattr(r, name) for r in recs]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([r.phase, r.epoch] + [repr(float(getattr(r, c))) for c in COMPONENTS])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


@dataclass
class Batch:
    paired: list[PairedExample] = field(default_factory=list)
    sources: list[Graph] = field(default_factory=list)
    targets: list[Graph] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.paired) + len(self.sources) + len(self.targets)


@dataclass
class Objective:
    total: Tensor
    L_trans: Tensor | None = None
    L_rec_s: Tensor | None = None
    L_rec_t: Tensor | None = None
    L_MI: Tensor | None = None

    def values(self) -> dict[str, float | None]:
        return {c: (None if getattr(self, c) is None else getattr(self, c).item()) for c in COMPONENTS}


def _mean(ts: Sequence[Tensor]) -> Tensor | None:
    if not ts:
        return None
    acc = ts[0]
    for t in ts[1:]:
        acc = acc + t
    return acc * (1.0 / len(ts)) if len(ts) > 1 else acc


def mi_weight(graphs: Sequence[Graph], model: ModelParams, cfg: TrainConfig) -> float:
    """Scale on the MI term that matches the per-element normalisation of the
    other losses: one over the mean embedding element count n·(d_H + d_P)."""
    if not cfg.mi_normalize or not graphs:
        return 1.0
    return 1.0 / (float(np.mean([g.n for g in graphs])) * (model.d_h + model.d_p))


def full_objective(batch: Batch, model: ModelParams, cfg: TrainConfig, anchor_rng: np.random.Generator,
                   perm_rng: np.random.Generator | None = None,
                   before_mi: Callable[[list[tuple[Tensor, Tensor]]], None] | None = None) -> Objective:
    """Translation loss on paired examples, λ-weighted reconstruction in both
    domains, and μ times the negated MI estimate over unpaired source graphs
    (scaled by :func:`mi_weight`).

    Each paired example draws one anchor set from ``anchor_rng`` and uses it
    for both its source and target graph.  ``before_mi`` receives detached
    copies of the (g_s, g_t_pred) pairs before the MI term is built; fine-tuning
    uses it to step the estimator on exactly these pairs.
    """
    if len(batch) == 0:
        raise ValueError("full_objective on an empty batch")
    rec_s, rec_t, trans, pairs = [], [], [], []
    for ex in batch.paired:
        anchors = select_anchors(ex.source, cfg.k, anchor_rng)
        es = embed(ex.source, anchors, model.enc_s, cfg)
        et = embed(ex.target, anchors, model.enc_t, cfg)
        trans.append(translation_loss(translate(es.H, es.P, model.trans), (et.H, et.P)))
        rec_s.append(reconstruct(ex.source, es, model.dec_s, cfg))
        rec_t.append(reconstruct(ex.target, et, model.dec_t, cfg))
    use_mi = cfg.effective_mu > 0 and model.mi is not None
    for g in batch.sources:
        es = embed(g, select_anchors(g, cfg.k, anchor_rng), model.enc_s, cfg)
        rec_s.append(reconstruct(g, es, model.dec_s, cfg))
        if use_mi:
            pairs.append(global_pair(es, model, cfg))
    for g in batch.targets:
        et = embed(g, select_anchors(g, cfg.k, anchor_rng), model.enc_t, cfg)
        rec_t.append(reconstruct(g, et, model.dec_t, cfg))

    obj = Objective(total=None, L_trans=_mean(trans), L_rec_s=_mean(rec_s), L_rec_t=_mean(rec_t))
    terms = []
    if obj.L_trans is not None:
        terms.append(obj.L_trans)
    rec = [t for t in (obj.L_rec_s, obj.L_rec_t) if t is not None]
    if rec:
        terms.append((rec[0] + rec[1] if len(rec) == 2 else rec[0]) * cfg.lam)
    if use_mi and len(pairs) >= 2:
        if perm_rng is None:
            raise ValueError("MI term needs a generator for derangements")
        if before_mi is not None:
            before_mi([(nx.constant(a.data.copy()), nx.constant(b.data.copy())) for a, b in pairs])
        _, obj.L_MI = mi_objective(pairs, model.mi, perm_rng)
        terms.append(obj.L_MI * (-cfg.effective_mu * mi_weight(batch.sources, model, cfg)))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    obj.total = total
    return obj


def _batches(items: Sequence, bs: int, rng: np.random.Generator) -> list[list]:
    order = rng.permutation(len(items)) if len(items) else []
    return [[items[i] for i in order[s : s + bs]] for s in range(0, len(items), bs)]


class _Cycler:
    """Endless shuffled batches over a pool, reshuffled each pass."""

    def __init__(self, items: Sequence, bs: int, rng: np.random.Generator):
        self.items, self.bs, self.rng = list(items), bs, rng
        self._queue: list[list] = []

    def next(self) -> list:
        if not self.items:
            return []
        if not self._queue:
            self._queue = _batches(self.items, self.bs, self.rng)
        return self._queue.pop(0)


class Trainer:
    """Owns the model, optimizers, PRNG substreams and report for one run."""

    STREAMS = ("anchors", "batching", "derangement")

    def __init__(self, dataset: Dataset, cfg: TrainConfig, model: ModelParams | None = None):
        self.dataset = dataset
        self.cfg = cfg
        d_f = _attribute_width(dataset)
        self.model = model if model is not None else build_model(cfg, d_f)
        self.rngs = {name: substream(cfg.seed, "train", name) for name in self.STREAMS}
        self.report = RunReport(config=cfg.to_flat())
        self.opt_model: Adam | None = None
        self.opt_mi: Adam | None = None
        self.finetune_epoch = 0
        self._cyclers: dict[str, _Cycler] | None = None

    # -- helpers ---------------------------------------------------------------

    def _step(self, opt: Adam, build: Callable[[], Tensor]) -> Tensor:
        for p in self.model.named_parameters().values():
            p.zero_grad()
        with Tape() as tape:
            loss = build()
        tape.backward(loss)
        opt.step()
        tape.clear()
        return loss

    def _record(self, phase: str, epoch: int, sums: dict[str, list[float]], total: float) -> EpochRecord:
        vals = {c: (float(np.mean(v)) if v else 0.0) for c, v in sums.items()}
        rec = EpochRecord(phase, epoch, total=total, **vals)
        self.report.records.append(rec)
        log.debug("%s epoch %d: %s", phase, epoch, rec)
        return rec

    # -- phase 1 ---------------------------------------------------------------

    def pretrain_autoencoders(self, epochs: int | None = None) -> list[EpochRecord]:
        cfg, ds = self.cfg, self.dataset
        epochs = cfg.epochs_pretrain_ae if epochs is None else epochs
        sources = [ex.source for ex in ds.paired_train] + list(ds.unpaired_source)
        targets = [ex.target for ex in ds.paired_train] + list(ds.unpaired_target)
        if epochs and (not sources or not targets):
            raise ValueError("autoencoder pretraining needs graphs in both domains")
        params = self.model.autoencoder_parameters()
        opt = Adam(params, cfg.lr)
        rng_a, rng_b = self.rngs["anchors"], self.rngs["batching"]
        ae_cfg = cfg.with_(lam=1.0, mu=0.0)
        out = []
        for ep in range(epochs):
            sums = {"L_rec_s": [], "L_rec_t": []}
            totals = []
            for bs_src, bs_tgt in zip_longest(_batches(sources, cfg.batch_size, rng_b),
                                              _batches(targets, cfg.batch_size, rng_b), fillvalue=[]):
                batch = Batch(sources=bs_src, targets=bs_tgt)
                holder = {}

                def build():
                    obj = full_objective(batch, self.model, ae_cfg, rng_a)
                    holder["obj"] = obj
                    return obj.total

                loss = self._step(opt, build)
                v = holder["obj"].values()
                for c in sums:
                    if v[c] is not None:
                        sums[c].append(v[c])
                totals.append(loss.item())
            out.append(self._record("pretrain_ae", ep, sums, float(np.mean(totals))))
        return out

    # -- phase 2 ---------------------------------------------------------------

    def train_translator(self, epochs: int | None = None) -> list[EpochRecord]:
        cfg, ds = self.cfg, self.dataset
        epochs = cfg.epochs_pretrain_trans if epochs is None else epochs
        params = self.model.translator_parameters()
        if not params or epochs == 0:
            return []
        if not ds.paired_train:
            raise ValueError("translator training needs paired examples")
        opt = Adam(params, cfg.lr)
        rng_a, rng_b = self.rngs["anchors"], self.rngs["batching"]
        out = []
        for ep in range(epochs):
            losses = []
            for chunk in _batches(ds.paired_train, cfg.batch_size, rng_b):
                with no_grad():
                    frozen = []
                    for ex in chunk:
                        anchors = select_anchors(ex.source, cfg.k, rng_a)
                        frozen.append((embed(ex.source, anchors, self.model.enc_s, cfg),
                                       embed(ex.target, anchors, self.model.enc_t, cfg)))

                def build():
                    terms = [translation_loss(translate(es.H, es.P, self.model.trans), (et.H, et.P))
                             for es, et in frozen]
                    return _mean(terms)

                losses.append(self._step(opt, build).item())
            m = float(np.mean(losses))
            out.append(self._record("pretrain_trans", ep, {"L_trans": [m]}, m))
        return out

    # -- phase 3 ---------------------------------------------------------------

    def _frozen_pairs(self, graphs: Sequence[Graph]):
        with no_grad():
            return [global_pair(embed(g, select_anchors(g, self.cfg.k, self.rngs["anchors"]),
                                      self.model.enc_s, self.cfg), self.model, self.cfg)
                    for g in graphs]

    def pretrain_mi(self, epochs: int | None = None) -> list[EpochRecord]:
        cfg, ds = self.cfg, self.dataset
        epochs = cfg.epochs_pretrain_mi if epochs is None else epochs
        if self.model.mi is None or cfg.mi_disabled or epochs == 0:
            return []
        if len(ds.unpaired_source) < 2:
            raise ValueError("MI pretraining needs at least 2 unpaired source graphs")
        params = self.model.mi_parameters()
        opt = Adam(params, cfg.lr)
        rng_b, rng_d = self.rngs["batching"], self.rngs["derangement"]
        out = []
        for ep in range(epochs):
            scores, losses = [], []
            for chunk in _batches(ds.unpaired_source, cfg.batch_size, rng_b):
                if len(chunk) < 2:
                    continue
                pairs = self._frozen_pairs(chunk)
                holder = {}

                def build():
                    est, mi = mi_objective(pairs, self.model.mi, rng_d)
                    holder["mi"] = mi
                    return est

                losses.append(self._step(opt, build).item())
                scores.append(holder["mi"].item())
            out.append(self._record("pretrain_mi", ep, {"L_MI": scores}, float(np.mean(losses))))
        return out

    # -- phase 4 ---------------------------------------------------------------

    def _ensure_finetune_state(self) -> None:
        if self.opt_model is None:
            self.opt_model = Adam(self.model.model_parameters(), self.cfg.lr)
        if self.opt_mi is None and self.model.mi is not None:
            self.opt_mi = Adam(self.model.mi_parameters(), self.cfg.lr)

    def _cycler(self, name: str, items) -> _Cycler:
        if self._cyclers is None:
            self._cyclers = {}
        if name not in self._cyclers:
            self._cyclers[name] = _Cycler(items, self.cfg.batch_size, self.rngs["batching"])
        return self._cyclers[name]

    def finetune(self, epochs: int | None = None, on_epoch: Callable[[Trainer], None] | None = None) -> list[EpochRecord]:
        """Run fine-tuning epochs until ``finetune_epoch`` reaches the budget.

        ``epochs`` caps how many epochs run in this call (for checkpointing
        mid-way); ``on_epoch`` is called after each completed epoch.
        """
        cfg, ds = self.cfg, self.dataset
        self._ensure_finetune_state()
        budget = cfg.epochs_finetune
        stop = budget if epochs is None else min(budget, self.finetune_epoch + epochs)
        rng_a, rng_b, rng_d = self.rngs["anchors"], self.rngs["batching"], self.rngs["derangement"]
        use_mi = self.model.mi is not None and cfg.effective_mu > 0
        has_unpaired = bool(ds.unpaired_source or ds.unpaired_target)
        n_iter = math.ceil(len(ds.paired_train) / cfg.batch_size) if ds.paired_train else math.ceil(
            max(len(ds.unpaired_source), len(ds.unpaired_target)) / cfg.batch_size)
        out = []
        while self.finetune_epoch < stop:
            ep = self.finetune_epoch
            sums = {c: [] for c in ("L_rec_s", "L_rec_t", "L_trans", "L_MI")}
            total = 0.0
            paired_batches = _batches(ds.paired_train, cfg.batch_size, rng_b)
            for it in range(n_iter):
                src = self._cycler("sources", ds.unpaired_source).next() if has_unpaired else []
                tgt = self._cycler("targets", ds.unpaired_target).next() if has_unpaired else []
                holder = {}

                def mi_step(pairs):
                    # (b) one estimator step on this iteration's unpaired sources
                    self._step(self.opt_mi, lambda: mi_objective(pairs, self.model.mi, rng_d)[0])

                def run(batch, ccfg, hook=None):
                    def build():
                        obj = full_objective(batch, self.model, ccfg, rng_a, rng_d, before_mi=hook)
                        holder["obj"] = obj
                        return obj.total
                    loss = self._step(self.opt_model, build)
                    for c, v in holder["obj"].values().items():
                        if c in sums and v is not None:
                            sums[c].append(v)
                    return loss.item()

                # (a) paired: reconstruction + translation
                if it < len(paired_batches):
                    total += run(Batch(paired=paired_batches[it]), cfg)
                # (c) unpaired: reconstruction - mu * MI; the embeddings do not
                # depend on the estimator, so (b) runs inside, before the MI term
                if src or tgt:
                    total += run(Batch(sources=src, targets=tgt), cfg, mi_step if use_mi else None)
            out.append(self._record("finetune", ep, sums, total / max(n_iter, 1)))
            self.finetune_epoch += 1
            if on_epoch is not None:
                on_epoch(self)
        return out

    # -- whole schedule -----------------------------------------------------------

    def run(self) -> RunReport:
        t0 = time.perf_counter()
        self.pretrain_autoencoders()
        self.train_translator()
        self.pretrain_mi()
        self.finetune()
        self.report.wall_clock += time.perf_counter() - t0
        return self.report

    # -- persistence ---------------------------------------------------------------

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        arrays = dict(self.model.state_arrays())
        if self.opt_model is not None:
            arrays.update(self.opt_model.state_arrays("adam.model"))
        if self.opt_mi is not None:
            arrays.update(self.opt_mi.state_arrays("adam.mi"))
        return arrays

    def checkpoint_meta(self) -> dict:
        meta = {
            "config": self.cfg.to_flat(),
            "d_f": self.model.d_f,
            "finetune_epoch": self.finetune_epoch,
            "rng": {k: get_state(r) for k, r in self.rngs.items()},
            "adam_t": {
                "model": self.opt_model.state.t if self.opt_model else None,
                "mi": self.opt_mi.state.t if self.opt_mi else None,
            },
            "records": [r.row() for r in self.report.records],
        }
        if self._cyclers:
            meta["cyclers"] = {
                name: [[self._index(name, g) for g in b] for b in c._queue] for name, c in self._cyclers.items()
            }
        return meta

    def _pool(self, name: str) -> list[Graph]:
        return self.dataset.unpaired_source if name == "sources" else self.dataset.unpaired_target

    def _index(self, name: str, g: Graph) -> int:
        pool = self._pool(name)
        for i, h in enumerate(pool):
            if h is g:
                return i
        raise ValueError("graph not in pool")  # pragma: no cover

    def save_checkpoint(self, prefix) -> None:
        nx.save_checkpoint(prefix, self.checkpoint_arrays(), self.checkpoint_meta())

    @classmethod
    def from_checkpoint(cls, prefix, dataset: Dataset) -> Trainer:
        arrays, meta = nx.load_checkpoint(prefix)
        cfg = apply_overrides(TrainConfig(), meta["config"])
        model = build_model(cfg, int(meta["d_f"]), np.random.default_rng(0))
        model.load_state_arrays(arrays)
        tr = cls(dataset, cfg, model)
        for k, st in meta["rng"].items():
            set_state(tr.rngs[k], st)
        tr.finetune_epoch = int(meta["finetune_epoch"])
        t = meta["adam_t"]
        if t["model"] is not None:
            tr.opt_model = Adam(model.model_parameters(), cfg.lr)
            tr.opt_model.load_state_arrays("adam.model", arrays, t["model"])
        if t["mi"] is not None and model.mi is not None:
            tr.opt_mi = Adam(model.mi_parameters(), cfg.lr)
            tr.opt_mi.load_state_arrays("adam.mi", arrays, t["mi"])
        tr.report.records = [EpochRecord(*row) for row in meta.get("records", [])]
        for name, queue in meta.get("cyclers", {}).items():
            c = tr._cycler(name, tr._pool(name))
            c._queue = [[tr._pool(name)[i] for i in b] for b in queue]
        return tr


def _attribute_width(ds: Dataset) -> int:
    for g in _all_graphs(ds):
        return g.d_f
    raise ValueError("dataset is empty")


def _all_graphs(ds: Dataset) -> Iterator[Graph]:
    for ex in ds.paired_train:
        yield ex.source
        yield ex.target
    yield from ds.unpaired_source
    yield from ds.unpaired_target
    for ex in ds.paired_test:
        yield ex.source


# functional entry points ------------------------------------------------------------


def pretrain_autoencoders(dataset: Dataset, model: ModelParams, cfg: TrainConfig) -> list[EpochRecord]:
    return Trainer(dataset, cfg, model).pretrain_autoencoders()


def train_translator(dataset: Dataset, model: ModelParams, cfg: TrainConfig) -> list[EpochRecord]:
    return Trainer(dataset, cfg, model).train_translator()


def pretrain_mi(dataset: Dataset, model: ModelParams, cfg: TrainConfig) -> list[EpochRecord]:
    return Trainer(dataset, cfg, model).pretrain_mi()


def finetune(dataset: Dataset, model: ModelParams, cfg: TrainConfig) -> RunReport:
    tr = Trainer(dataset, cfg, model)
    tr.finetune()
    return tr.report
