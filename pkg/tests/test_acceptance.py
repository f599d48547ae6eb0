"""Acceptance suite: one PASS/FAIL line per criterion.

The desk-scale runs (criteria 4, 5 and 7) take most of an hour on one core.
"""

import functools
import time

import numpy as np
import oracles
from segtran import numerics as nx
from segtran.cli import main
from segtran.config import TrainConfig
from segtran.decoder import DecodedGraph, decode, decoder_param_init, predict_adjacency, reconstruction_loss
from segtran.encoder import NodeEmbeddings
from segtran.evaluation import evaluate_test, weighted_mape, weighted_mse
from segtran.experiments import run_ratio_sweep
from segtran.graphs import Graph, build_ba_dataset, k_hop_reachability, position_embedding, select_anchors
from segtran.model import build_model, embed, global_pair
from segtran.numerics import no_grad
from segtran.rng import substream
from segtran.training import Batch, Trainer, full_objective
from segtran.translator import (
    derangement,
    discriminator_scores,
    mi_objective,
    mi_param_init,
    translate,
    translation_loss,
    translator_param_init,
)

TRIALS = 20
FD_TOL = 1e-5
EXACT = 1e-12
SEEDS = (0, 1, 2)
DESK_COUNTS = {"paired_train": 150, "unpaired_source": 150, "unpaired_target": 150, "paired_test": 100}
DESK = TrainConfig(d_hidden=16)
SMALL = TrainConfig(d_hidden=4, heads=2, d_k=4, d_v=4, mlp_hidden=8, trans_hidden=8, mi_hidden=8, k=3,
                    batch_size=4, epochs_pretrain_ae=2, epochs_pretrain_trans=2, epochs_pretrain_mi=2,
                    epochs_finetune=10)


def small_data(seed=0, n=7):
    return build_ba_dataset({"paired_train": 6, "unpaired_source": 5, "unpaired_target": 5, "paired_test": 3},
                            n_nodes=n, seed=seed)


# --- criterion 1: finite differences ------------------------------------------------------


def _graph(rng, n, p, d_f=1):
    return Graph(oracles.random_simple_graph(rng, n, p), rng.normal(size=(n, d_f)))


def _p(rng, *shape):
    return nx.parameter(rng.normal(size=shape))


def _jitter(params, rng):
    """Move every entry off zero so no ReLU sits exactly on its kink (zero-initialised biases)."""
    for t in params:
        t.data += rng.normal(scale=0.3, size=t.shape)
    return list(params)


def _op_cases():
    """name -> factory(rng) returning (build, params)."""
    def unary(op):
        def make(rng):
            a = _p(rng, 3, 4)
            c = rng.normal(size=(3, 4))
            return (lambda: nx.sum_all(op(a) * c)), [a]
        return make

    def binary(op):
        def make(rng):
            a, b = _p(rng, 3, 4), _p(rng, 3, 4)
            c = rng.normal(size=(3, 4))
            return (lambda: nx.sum_all(op(a, b) * c)), [a, b]
        return make

    def reduce(op):
        def make(rng):
            a = _p(rng, 3, 4)
            return (lambda: op(a * a) * 1.3 + op(a)), [a]
        return make

    def matmul(rng):
        a, b = _p(rng, 3, 4), _p(rng, 4, 2)
        c = rng.normal(size=(3, 2))
        return (lambda: nx.sum_all(nx.matmul(a, b) * c)), [a, b]

    def concat(rng):
        a, b = _p(rng, 3, 2), _p(rng, 3, 3)
        c = rng.normal(size=(3, 5))
        return (lambda: nx.sum_all(nx.concat([a, b]) * c)), [a, b]

    def mean_rows(rng):
        a = _p(rng, 4, 3)
        c = rng.normal(size=(1, 3))
        return (lambda: nx.sum_all(nx.mean_rows(a) * c)), [a]

    def row_softmax(rng):
        a = _p(rng, 3, 4)
        c = rng.normal(size=(3, 4))
        return (lambda: nx.sum_all(nx.row_softmax(a) * c)), [a]

    def transpose(rng):
        a = _p(rng, 3, 4)
        c = rng.normal(size=(4, 3))
        return (lambda: nx.sum_all(nx.transpose(a) * c)), [a]

    def linear(rng):
        x, w, b = _p(rng, 4, 3), _p(rng, 3, 5), _p(rng, 5)
        c = rng.normal(size=(4, 5))
        act = "relu" if rng.random() < 0.5 else None
        return (lambda: nx.sum_all(nx.linear(x, w, b, activation=act) * c)), [x, w, b]

    def tile_rows(rng):
        v = _p(rng, 1, 3)
        c = rng.normal(size=(4, 3))
        return (lambda: nx.sum_all(nx.tile_rows(v, 4) * c)), [v]

    def take_rows(rng):
        a = _p(rng, 4, 3)
        idx = rng.integers(0, 4, size=6)
        c = rng.normal(size=(6, 3))
        return (lambda: nx.sum_all(nx.take_rows(a, idx) * c)), [a]

    def slice_cols(rng):
        a = _p(rng, 3, 5)
        c = rng.normal(size=(3, 2))
        return (lambda: nx.sum_all(nx.slice_cols(a, 1, 3) * c)), [a]

    def bilinear(rng):
        e, s = _p(rng, 4, 3), _p(rng, 3, 3)
        c = rng.normal(size=(4, 4))
        return (lambda: nx.sum_all(nx.bilinear(e, s) * c)), [e, s]

    def mp_block(rng):
        n, d, h = 5, 3, 4
        x, w, b = _p(rng, n, d), _p(rng, 2 * d, h), _p(rng, h)
        agg = rng.random((n, n))
        skip = rng.normal(size=(n, 2))
        c = rng.normal(size=(n, h + 2))
        return (lambda: nx.sum_all(nx.message_passing_block(x, agg, w, b, skip) * c)), [x, w, b]

    def sq_error(rng):
        a, b = _p(rng, 3, 4), _p(rng, 3, 4)
        wt = rng.random((3, 4))
        return (lambda: nx.sq_error(a, b, wt, scale=0.3)), [a, b]

    def attention(rng):
        n, d_p, d_h, heads, d_k, d_v = 4, 3, 2, 2, 3, 2
        p, h = _p(rng, n, d_p), _p(rng, n, d_h)
        wq, wk = _p(rng, heads, d_p, d_k), _p(rng, heads, d_p, d_k)
        wv, wo = _p(rng, heads, d_h, d_v), _p(rng, heads * d_v, d_h)
        c = rng.normal(size=(n, d_h))
        return (lambda: nx.sum_all(nx.multihead_attention(p, h, wq, wk, wv, wo) * c)), [p, h, wq, wk, wv, wo]

    return {
        "add": binary(nx.add), "sub": binary(nx.sub), "mul": binary(nx.mul), "neg": unary(nx.neg),
        "relu": unary(nx.relu), "sigmoid": unary(nx.sigmoid), "softplus": unary(nx.softplus),
        "sum_all": reduce(nx.sum_all), "mean_all": reduce(nx.mean_all), "frobenius_sq": reduce(nx.frobenius_sq),
        "matmul": matmul, "concat": concat, "mean_rows": mean_rows, "row_softmax": row_softmax,
        "transpose": transpose, "linear": linear, "tile_rows": tile_rows, "take_rows": take_rows,
        "slice_cols": slice_cols, "bilinear": bilinear, "message_passing_block": mp_block,
        "sq_error": sq_error, "multihead_attention": attention,
    }


def _loss_cases():
    def rec(rng):
        n, d_h, d_p, d_f = 5, 3, 2, 3
        dec = decoder_param_init(d_h, d_p, d_f, rng, n_blocks=1, heads=2, d_k=2, d_v=2, mlp_hidden=4)
        g = _graph(rng, n, 0.4, d_f)
        H, P = _p(rng, n, d_h), _p(rng, n, d_p)
        delta = rng.uniform(0.1, 1.0)
        params = [H, P, *_jitter(dec.named_parameters().values(), rng)]
        return (lambda: reconstruction_loss(g, decode(NodeEmbeddings(H, P), dec), delta)), params

    def trans(rng):
        n, d_h, d_p = 4, 3, 2
        tp = translator_param_init(d_h, d_p, rng, hidden=5)
        H, P = _p(rng, n, d_h), _p(rng, n, d_p)
        Ht, Pt = _p(rng, n, d_h), _p(rng, n, d_p)
        params = [H, P, Ht, Pt, *_jitter(tp.named_parameters().values(), rng)]
        return (lambda: translation_loss(translate(H, P, tp), (Ht, Pt))), params

    def mi(rng):
        m, w = 4, 3
        mp = mi_param_init(w, rng, hidden=5)
        gs = [_p(rng, 1, w) for _ in range(m)]
        gt = [_p(rng, 1, w) for _ in range(m)]
        perm = derangement(m, rng)
        params = [*gs, *gt, *_jitter(mp.named_parameters().values(), rng)]
        return (lambda: mi_objective(list(zip(gs, gt)), mp, rng, perm)[0]), params

    def full(rng):
        ds = small_data(seed=int(rng.integers(1 << 30)), n=5)
        cfg = SMALL.with_(lam=float(rng.uniform(0.1, 2)), mu=float(rng.uniform(0.1, 2)), blocks=1, enc_layers=1)
        model = build_model(cfg, ds.paired_train[0].source.d_f, rng)
        batch = Batch(paired=ds.paired_train[:1], sources=ds.unpaired_source[:2], targets=ds.unpaired_target[:1])
        tag = int(rng.integers(1 << 30))
        named = model.named_parameters()
        _jitter(named.values(), rng)
        picked = [named[k] for k in sorted(named) if named[k].data.size <= 64]
        idx = rng.choice(len(picked), size=6, replace=False)
        return (lambda: full_objective(batch, model, cfg, substream(tag, "a"), substream(tag, "d")).total,
                [picked[i] for i in idx])

    return {"reconstruction loss": rec, "translation loss": trans, "MI estimator loss": mi, "full objective": full}


def _straddles_kink(build, params, h=1e-5):
    """True when the finite-difference estimate itself moves with the step size.

    That only happens when a ReLU switches inside [x - h, x + h]; a wrong
    analytic gradient leaves both estimates in agreement with each other.
    """
    def value():
        return build().item()

    for p in params:
        a, b = nx.numerical_grad(value, p.data, h), nx.numerical_grad(value, p.data, h / 4)
        if nx.relative_error(a, b) >= FD_TOL:
            return True
    return False


def test_criterion_1_gradients(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, redrawn = {}, 0
    for name, make in {**_op_cases(), **_loss_cases()}.items():
        errs = []
        while len(errs) < TRIALS:
            build, params = make(rng)
            err = nx.check_gradients(build, params)
            if err >= FD_TOL and _straddles_kink(build, params):
                redrawn += 1
                continue
            errs.append(err)
        worst[name] = max(errs)
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < FD_TOL}
    ok = not bad and elapsed < 60
    verdict(1, ok, f"{len(worst)} ops/losses x {TRIALS} trials, worst rel err {max(worst.values()):.1e}"
                   f" (tol {FD_TOL:g}), {redrawn} kink-straddling draws redrawn, {elapsed:.1f}s"
                   + (f", failing {sorted(bad)}" if bad else ""))


# --- criterion 2: graph oracles -------------------------------------------------------------


def test_criterion_2_graph_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    reach_ok = 0
    for _ in range(100):
        n = int(rng.integers(1, 31))
        g = _graph(rng, n, float(rng.uniform(0.02, 0.5)))
        k = int(rng.integers(1, 5))
        reach_ok += np.array_equal(k_hop_reachability(g, k).adjacency, oracles.reach_by_matrix_power(g.adjacency, k))
    pos_ok = 0
    for _ in range(50):
        n = int(rng.integers(1, 31))
        g = _graph(rng, n, float(rng.uniform(0.02, 0.4)))
        anchors = select_anchors(g, int(rng.integers(1, 9)), rng)
        got = position_embedding(g, anchors).values
        pos_ok += np.array_equal(got, oracles.reciprocal_positions(g.adjacency, anchors))
    elapsed = time.perf_counter() - t0
    verdict(2, reach_ok == 100 and pos_ok == 50 and elapsed < 60,
            f"reachability {reach_ok}/100 exact, positions {pos_ok}/50 exact, {elapsed:.1f}s")


# --- criterion 3: loss and metric oracles -----------------------------------------------------


def test_criterion_3_loss_metric_oracles(verdict):
    rng = np.random.default_rng(31)
    worst = {"reconstruction": 0.0, "translation": 0.0, "weighted MSE": 0.0, "weighted MAPE": 0.0}
    for _ in range(50):
        n, d_f = int(rng.integers(2, 12)), int(rng.integers(1, 5))
        g = _graph(rng, n, float(rng.uniform(0.1, 0.6)), d_f)
        A_pred, F_pred = rng.random((n, n)), rng.normal(size=(n, d_f))
        delta = float(rng.uniform(0.05, 1.0))
        dec = DecodedGraph(nx.constant(A_pred), nx.constant(F_pred))
        got = reconstruction_loss(g, dec, delta).item()
        want = oracles.reconstruction_loss(g.adjacency, g.attributes, A_pred, F_pred, delta)
        worst["reconstruction"] = max(worst["reconstruction"], abs(got - want))

        d_h, d_p = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        Hp, Pp, Ht, Pt = (rng.normal(size=(n, d)) for d in (d_h, d_p, d_h, d_p))
        got = translation_loss((nx.constant(Hp), nx.constant(Pp)), (nx.constant(Ht), nx.constant(Pt))).item()
        worst["translation"] = max(worst["translation"], abs(got - oracles.translation_loss(Hp, Pp, Ht, Pt)))

        want = oracles.weighted_mse(g.adjacency, g.attributes, A_pred, F_pred)
        worst["weighted MSE"] = max(worst["weighted MSE"], abs(weighted_mse((A_pred, F_pred), g) - want))
        want = oracles.weighted_mape(g.adjacency, g.attributes, A_pred, F_pred)
        worst["weighted MAPE"] = max(worst["weighted MAPE"], abs(weighted_mape((A_pred, F_pred), g) - want))
    ok = all(v <= EXACT for v in worst.values())
    verdict(3, ok, "50 instances, max abs diff " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# --- criteria 4 and 7: desk-scale runs ------------------------------------------------------


def _mi_scores(trainer, graphs, seed):
    """Matched vs deranged discriminator scores with anchors drawn off the trainer's streams."""
    rng = substream(seed, "acceptance-mi")
    cfg, model = trainer.cfg, trainer.model
    with no_grad():
        pairs = [global_pair(embed(g, select_anchors(g, cfg.k, rng), model.enc_s, cfg), model, cfg) for g in graphs]
    pos, neg = discriminator_scores(pairs, model.mi, derangement(len(pairs), rng))
    return float(pos.mean()), float(neg.mean())


@functools.cache
def desk_run(seed, flag):
    ds = build_ba_dataset(DESK_COUNTS, n_nodes=20, seed=seed)
    cfg = DESK.with_(seed=seed, **({flag: True} if flag else {}))
    t0 = time.perf_counter()
    tr = Trainer(ds, cfg)
    untrained = evaluate_test(tr.model, ds.paired_test, cfg)
    tr.pretrain_autoencoders()
    tr.train_translator()
    tr.pretrain_mi()
    mi = _mi_scores(tr, [ex.source for ex in ds.paired_test], seed) if tr.model.mi is not None else None
    tr.finetune()
    trained = evaluate_test(tr.model, ds.paired_test, cfg)
    ft = tr.report.phase("finetune")
    return {"untrained": untrained.mse, "trained": trained.mse, "mi": mi,
            "ft_first": ft[0].total, "ft_last": ft[-1].total, "seconds": time.perf_counter() - t0}


def test_criterion_4_desk_end_to_end(verdict):
    full = [desk_run(s, None) for s in SEEDS]
    shared = [desk_run(s, "shared_embedding") for s in SEEDS]
    f_mse = np.mean([r["trained"] for r in full])
    s_mse = np.mean([r["trained"] for r in shared])
    f_untrained = np.mean([r["untrained"] for r in full])
    slowest = max(r["seconds"] for r in full + shared)
    ok = f_mse < s_mse and f_mse <= 0.5 * f_untrained
    verdict(4, ok, f"full {f_mse:.4f} vs shared-embedding {s_mse:.4f}; untrained {f_untrained:.4f}"
                   f" (ratio {f_mse / f_untrained:.2f}); slowest run {slowest / 60:.1f} min")


def test_finetune_total_decreases_at_desk_scale():
    for s in SEEDS:
        r = desk_run(s, None)
        assert r["ft_last"] < r["ft_first"]


def test_criterion_7_mi_sanity(verdict):
    scores = [desk_run(s, None)["mi"] for s in SEEDS]
    wins = sum(pos > neg for pos, neg in scores)
    detail = ", ".join(f"seed {s}: {pos:+.3f} vs {neg:+.3f}" for s, (pos, neg) in zip(SEEDS, scores))
    verdict(7, wins == len(SEEDS), f"matched > deranged on held-out test sources {wins}/3 ({detail})")


# --- criterion 5: unpaired ratio ------------------------------------------------------------


def test_criterion_5_unpaired_ratio(verdict):
    t0 = time.perf_counter()
    sweep = run_ratio_sweep(DESK, [0.1, 0.6], SEEDS)
    low, high = sweep.point(0.1).mse_mean, sweep.point(0.6).mse_mean
    elapsed = time.perf_counter() - t0
    verdict(5, high <= low and elapsed <= 30 * 60,
            f"mean MSE ratio 0.6: {high:.4f} <= ratio 0.1: {low:.4f}; {elapsed / 60:.1f} min")


# --- criterion 6: ablation structure -------------------------------------------------------


def test_criterion_6_ablation_structure(verdict, tmp_path):
    ds = small_data()
    tr = Trainer(ds, SMALL.with_(no_mi=True, epochs_finetune=3))
    tr.run()
    l_mi = tr.report.column("L_MI", "finetune")
    mi_zero = len(l_mi) == 3 and all(v == 0.0 for v in l_mi)

    tr = Trainer(ds, SMALL.with_(shared_embedding=True, epochs_finetune=2))
    tr.run()
    tr.save_checkpoint(tmp_path / "ck")
    arrays, _ = nx.load_checkpoint(tmp_path / "ck")
    n_trans = sum(k.startswith("trans.") for k in arrays)

    cfg = SMALL.with_(no_attention=True)
    model = build_model(cfg, ds.paired_train[0].source.d_f, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    H, P = nx.constant(rng.normal(size=(6, model.d_h))), nx.constant(rng.normal(size=(6, model.d_p)))
    out = decode(NodeEmbeddings(H, P), model.dec_t)
    ref = predict_adjacency(H, P, model.dec_t.S)
    diff = float(np.max(np.abs(out.A_pred.data - ref.data)))
    ok = mi_zero and n_trans == 0 and diff <= EXACT
    verdict(6, ok, f"no_mi L_MI all zero: {mi_zero}; shared-embedding translator arrays: {n_trans};"
                   f" no_attention max diff {diff:.1e}")


# --- criterion 8: determinism and resume ---------------------------------------------------


def test_criterion_8_determinism_and_resume(verdict, tmp_path):
    data = tmp_path / "d"
    assert main(["gen-data", "--nodes", "7", "--paired", "6", "--unpaired-source", "5", "--unpaired-target", "5",
                 "--test", "3", "--seed", "3", "--out", str(data)]) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"dims.d_hidden": 4, "dims.heads": 2, "dims.d_k": 4, "dims.d_v": 4, "dims.k": 3,'
                   ' "epochs.pretrain_ae": 2, "epochs.pretrain_trans": 2, "epochs.pretrain_mi": 2,'
                   ' "epochs.finetune": 4, "batch_size": 4}')
    reports = []
    for name in ("a", "b"):
        assert main(["train", "--data", str(data), "--out", str(tmp_path / name), "--config", str(cfg),
                     "--seed", "11"]) == 0
        reports.append((tmp_path / name / "report.csv").read_bytes())
    same_csv = reports[0] == reports[1]

    ds = small_data(seed=4)
    ref = Trainer(ds, SMALL)
    ref.run()
    tr = Trainer(ds, SMALL)
    tr.pretrain_autoencoders()
    tr.train_translator()
    tr.pretrain_mi()
    tr.finetune(epochs=4)
    tr.save_checkpoint(tmp_path / "ck")
    resumed = Trainer.from_checkpoint(tmp_path / "ck", ds)
    resumed.finetune()
    after = resumed.report.phase("finetune")[4:]
    expect = ref.report.phase("finetune")[4:]
    identical = len(after) == 6 and [r.row() for r in after] == [r.row() for r in expect]
    verdict(8, same_csv and identical,
            f"report.csv byte-identical: {same_csv}; {len(after)} resumed epochs bit-identical: {identical}")


# --- criterion 9: constant baseline ---------------------------------------------------------


def test_criterion_9_constant_baseline(verdict):
    from segtran.evaluation import adjacency_weighted_mape, adjacency_weighted_mse

    rng = np.random.default_rng(9)
    graphs = [_graph(rng, int(rng.integers(2, 40)), float(rng.uniform(0, 1))) for _ in range(200)]
    graphs += [Graph(np.zeros((5, 5)), np.zeros((5, 1))), Graph(np.ones((5, 5)) - np.eye(5), np.zeros((5, 1)))]
    dev_mse = max(abs(adjacency_weighted_mse(np.full((g.n, g.n), 0.5), g) - 0.25) for g in graphs)
    dev_mape = max(abs(adjacency_weighted_mape(np.full((g.n, g.n), 0.5), g) - 0.5) for g in graphs)
    verdict(9, dev_mse <= EXACT and dev_mape <= EXACT,
            f"{len(graphs)} graphs, max |MSE - 0.25| {dev_mse:.1e}, max |MAPE - 0.5| {dev_mape:.1e}")
