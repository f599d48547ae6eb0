"""Ablation table, unpaired-ratio sweep and λ/μ sensitivity grid.

Every point is an isolated training run with its own model, tape and
generators, so points can run in worker processes in any order; results are
merged by coordinates afterwards.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import TrainConfig
from .evaluation import MetricPair, evaluate_test
from .graphs import Dataset, build_ba_dataset
from .model import build_model
from .rng import derived_seed
from .training import Trainer

log = logging.getLogger(__name__)

# (row label, config flag); the full model has no flag
ABLATIONS: tuple[tuple[str, str | None], ...] = (
    ("Shared Embedding", "shared_embedding"),
    ("No position", "no_position"),
    ("No MI", "no_mi"),
    ("No multi-head attention", "no_attention"),
    ("full", None),
)

DESK_COUNTS = {"paired_train": 150, "unpaired_source": 150, "unpaired_target": 150, "paired_test": 100}


def _std(xs: Sequence[float]) -> float | None:
    return float(np.std(xs, ddof=1)) if len(xs) >= 2 else None


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


@dataclass
class SweepPoint:
    axis: tuple
    mse: list[float] = field(default_factory=list)
    mape: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)

    @property
    def mse_mean(self) -> float:
        return float(np.mean(self.mse))

    @property
    def mape_mean(self) -> float:
        return float(np.mean(self.mape))

    @property
    def mse_std(self) -> float | None:
        return _std(self.mse)

    @property
    def mape_std(self) -> float | None:
        return _std(self.mape)


@dataclass
class SweepResult:
    """Per-point seed means, and sample standard deviations when at least two seeds ran."""

    axis_names: tuple[str, ...]
    points: list[SweepPoint]

    def point(self, *axis) -> SweepPoint:
        for p in self.points:
            if p.axis == tuple(axis):
                return p
        raise KeyError(axis)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.axis_names) + ["mse_mean", "mse_std", "mape_mean", "mape_std"])
        for p in self.points:
            w.writerow([repr(a) for a in p.axis]
                       + [_fmt(p.mse_mean), _fmt(p.mse_std), _fmt(p.mape_mean), _fmt(p.mape_std)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


@dataclass
class AblationRow:
    label: str
    flag: str | None
    mse: list[float] = field(default_factory=list)
    mape: list[float] = field(default_factory=list)
    untrained_mse: list[float] = field(default_factory=list)
    l_mi: list[list[float]] = field(default_factory=list)

    @property
    def mse_mean(self) -> float:
        return float(np.mean(self.mse))

    @property
    def mape_mean(self) -> float:
        return float(np.mean(self.mape))


@dataclass
class AblationTable:
    seeds: list[int]
    rows: list[AblationRow]

    def row(self, label: str) -> AblationRow:
        for r in self.rows:
            if r.label == label or r.flag == label:
                return r
        raise KeyError(label)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "mse_mean", "mse_std", "mape_mean", "mape_std"])
        for r in self.rows:
            w.writerow([r.label, _fmt(r.mse_mean), _fmt(_std(r.mse)), _fmt(r.mape_mean), _fmt(_std(r.mape))])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


# --- workers (top level so they pickle) ------------------------------------------------


def train_and_evaluate(dataset: Dataset, cfg: TrainConfig) -> dict:
    """One full run: untrained score, four phases, trained score."""
    trainer = Trainer(dataset, cfg)
    before = evaluate_test(trainer.model, dataset.paired_test, cfg)
    report = trainer.run()
    after = evaluate_test(trainer.model, dataset.paired_test, cfg)
    return {
        "untrained": before,
        "metrics": after,
        "L_MI": report.column("L_MI"),
        "wall_clock": report.wall_clock,
    }


def _ablation_job(args) -> dict:
    dataset, cfg = args
    out = train_and_evaluate(dataset, cfg)
    out.pop("wall_clock")
    return out


def _ratio_job(args) -> MetricPair:
    counts, n_nodes, data_seed, cfg = args
    ds = build_ba_dataset(counts, n_nodes=n_nodes, seed=data_seed)
    return train_and_evaluate(ds, cfg)["metrics"]


def _pretrain_job(args):
    counts, n_nodes, data_seed, cfg = args
    ds = build_ba_dataset(counts, n_nodes=n_nodes, seed=data_seed)
    tr = Trainer(ds, cfg)
    tr.pretrain_autoencoders()
    tr.train_translator()
    tr.pretrain_mi()
    return tr.model.state_arrays()


def _finetune_job(args) -> MetricPair:
    counts, n_nodes, data_seed, pre_cfg, state, cfg = args
    ds = build_ba_dataset(counts, n_nodes=n_nodes, seed=data_seed)
    model = build_model(pre_cfg, ds.paired_train[0].source.d_f, np.random.default_rng(0))
    model.load_state_arrays(state)
    tr = Trainer(ds, cfg, model)
    tr.finetune()
    return evaluate_test(tr.model, ds.paired_test, cfg)


def _map(fn: Callable, jobs: list, threads: int) -> list:
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def seed_list(base_seed: int, n: int) -> list[int]:
    if n < 1:
        raise ValueError("need at least one seed")
    return [base_seed + i for i in range(n)]


# --- drivers -----------------------------------------------------------------------------


def run_ablation_suite(dataset: Dataset, base_cfg: TrainConfig, seeds: Sequence[int],
                       variants: Sequence[tuple[str, str | None]] = ABLATIONS,
                       threads: int = 1) -> AblationTable:
    """Train every variant on the same data under the same seeds."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("run_ablation_suite needs at least one seed")
    jobs, keys = [], []
    for label, flag in variants:
        for s in seeds:
            cfg = base_cfg.with_(seed=s, **({flag: True} if flag else {}))
            jobs.append((dataset, cfg))
            keys.append(label)
    results = _map(_ablation_job, jobs, threads)
    rows = {label: AblationRow(label, flag) for label, flag in variants}
    for label, res in zip(keys, results):
        r = rows[label]
        r.mse.append(res["metrics"].mse)
        r.mape.append(res["metrics"].mape)
        r.untrained_mse.append(res["untrained"].mse)
        r.l_mi.append(res["L_MI"])
    return AblationTable(seeds, [rows[label] for label, _ in variants])


def ratio_counts(ratio: float, n_paired: int, n_test: int) -> dict[str, int]:
    """Unpaired graphs = round(ratio × paired), split evenly (source gets the odd one)."""
    if ratio < 0:
        raise ValueError(f"ratio must be non-negative, got {ratio}")
    n_unpaired = int(round(ratio * n_paired))
    return {
        "paired_train": n_paired,
        "unpaired_source": math.ceil(n_unpaired / 2),
        "unpaired_target": n_unpaired // 2,
        "paired_test": n_test,
    }


def run_ratio_sweep(base_cfg: TrainConfig, ratios: Sequence[float], seeds: Sequence[int],
                    n_paired: int = 150, n_test: int = 100, n_nodes: int = 20,
                    threads: int = 1) -> SweepResult:
    """Fix the paired and test partitions (data seed = replicate seed) and vary
    the unpaired pool.

    Every ratio trains under the replicate seed itself, so within a replicate
    the initialisation and the paired data are identical and only the
    unpaired pool changes.
    """
    ratios, seeds = [float(r) for r in ratios], list(seeds)
    if not ratios:
        raise ValueError("run_ratio_sweep needs at least one ratio")
    if not seeds:
        raise ValueError("run_ratio_sweep needs at least one seed")
    jobs, keys = [], []
    for r in ratios:
        counts = ratio_counts(r, n_paired, n_test)
        for s in seeds:
            jobs.append((counts, n_nodes, s, base_cfg.with_(seed=s)))
            keys.append((r, s))
    results = _map(_ratio_job, jobs, threads)
    points = {r: SweepPoint((r,)) for r in ratios}
    for (r, s), m in zip(keys, results):
        points[r].mse.append(m.mse)
        points[r].mape.append(m.mape)
        points[r].seeds.append(s)
    return SweepResult(("ratio",), [points[r] for r in ratios])


def sensitivity_point_seed(seed: int, lam: float, mu: float) -> int:
    return derived_seed(seed, "sensitivity", repr(float(lam)), repr(float(mu)))


def run_sensitivity_grid(base_cfg: TrainConfig, lams: Sequence[float], mus: Sequence[float],
                         seeds: Sequence[int], counts: dict[str, int] | None = None,
                         n_nodes: int = 20, threads: int = 1) -> SweepResult:
    """Pretrain once per seed, then fine-tune a copy for every (λ, μ).

    Pretraining does not depend on λ or μ (the autoencoder phase is unweighted
    reconstruction), so sharing it is exact.
    """
    lams, mus, seeds = [float(x) for x in lams], [float(x) for x in mus], list(seeds)
    if not lams or not mus:
        raise ValueError("run_sensitivity_grid needs non-empty λ and μ grids")
    if not seeds:
        raise ValueError("run_sensitivity_grid needs at least one seed")
    counts = dict(DESK_COUNTS if counts is None else counts)
    pre_cfgs = [base_cfg.with_(seed=s) for s in seeds]
    states = _map(_pretrain_job, [(counts, n_nodes, s, c) for s, c in zip(seeds, pre_cfgs)], threads)
    jobs, keys = [], []
    for lam in lams:
        for mu in mus:
            for s, pre, st in zip(seeds, pre_cfgs, states):
                cfg = base_cfg.with_(lam=lam, mu=mu, seed=sensitivity_point_seed(s, lam, mu))
                jobs.append((counts, n_nodes, s, pre, st, cfg))
                keys.append((lam, mu, s))
    results = _map(_finetune_job, jobs, threads)
    points = {(lam, mu): SweepPoint((lam, mu)) for lam in lams for mu in mus}
    for (lam, mu, s), m in zip(keys, results):
        p = points[(lam, mu)]
        p.mse.append(m.mse)
        p.mape.append(m.mape)
        p.seeds.append(s)
    return SweepResult(("lambda", "mu"), [points[(lam, mu)] for lam in lams for mu in mus])
