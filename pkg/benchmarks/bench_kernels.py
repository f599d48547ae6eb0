"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py            # kernel timings + one epoch per phase
    python3 benchmarks/bench_kernels.py --kernels  # kernel timings only

Kernel timings call both backends directly in this process.  Epoch timings
run each backend in a subprocess (the backend is fixed at import), on the
desk-scale shapes: 20-node BA graphs, d_hidden=16, 4 heads.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from segtran.kernels import BACKENDS


def _best(fn, number):
    return min(timeit.repeat(fn, number=number, repeat=5)) / number * 1e6


def kernel_table() -> list[tuple[str, dict[str, float]]]:
    rng = np.random.default_rng(0)
    n, heads, d_p, d_h, d = 20, 4, 24, 36, 16
    p, h = rng.normal(size=(n, d_p)), rng.normal(size=(n, d_h))
    wq, wk = rng.normal(size=(heads, d_p, d)), rng.normal(size=(heads, d_p, d))
    wv, wo = rng.normal(size=(heads, d_h, d)), rng.normal(size=(heads * d, d_h))
    x, agg = rng.normal(size=(n, d_h)), rng.random((n, n))
    w, b, skip = rng.normal(size=(2 * d_h, d)), rng.normal(size=d), rng.normal(size=(n, 20))
    adj = np.triu((rng.random((n, n)) < 0.1).astype(float), 1)
    adj = adj + adj.T
    big = rng.normal(size=(64, 64))

    rows = []
    for name, make in [
        ("mha_forward", lambda k: lambda: k.mha_forward(p, h, wq, wk, wv, wo)),
        ("mha_backward", lambda k: (lambda c: lambda: k.mha_backward(
            np.ones((n, d_h)), p, h, wq, wk, wv, wo, c, True, True))(k.mha_forward(p, h, wq, wk, wv, wo)[1])),
        ("mp_block_forward", lambda k: lambda: k.mp_block_forward(x, agg, w, b, skip)),
        ("mp_block_backward", lambda k: (lambda o, c: lambda: k.mp_block_backward(
            np.ones_like(o), agg, w, c, o, True))(*k.mp_block_forward(x, agg, w, b, skip))),
        ("hop_distances", lambda k: lambda: k.hop_distances(adj)),
        ("adam_update 64x64", lambda k: (lambda s: lambda: k.adam_update(
            s[0], big, s[1], s[2], 1e-3, 0.9, 0.999, 1e-8, 0.5, 0.5))(
            [np.zeros((64, 64)), np.zeros((64, 64)), np.zeros((64, 64))])),
    ]:
        rows.append((name, {b_name: _best(make(mod), 2000) for b_name, mod in BACKENDS.items()}))
    return rows


_EPOCH_SNIPPET = r"""
import json, time
from segtran import BACKEND
from segtran.config import TrainConfig
from segtran.graphs import build_ba_dataset
from segtran.training import Trainer
ds = build_ba_dataset({"paired_train": 40, "unpaired_source": 40, "unpaired_target": 40, "paired_test": 10},
                      n_nodes=20, seed=0)
tr = Trainer(ds, TrainConfig())
out = {"backend": BACKEND}
for name, fn in [("pretrain_ae", tr.pretrain_autoencoders), ("pretrain_trans", tr.train_translator),
                 ("pretrain_mi", tr.pretrain_mi), ("finetune", tr.finetune)]:
    t = time.perf_counter()
    fn(epochs=1)
    out[name] = time.perf_counter() - t
print(json.dumps(out))
"""


def epoch_table() -> dict[str, dict[str, float]]:
    out = {}
    for backend in BACKENDS:
        env = dict(os.environ)
        env.pop("SEGTRAN_PURE_PYTHON", None)
        if backend == "python":
            env["SEGTRAN_PURE_PYTHON"] = "1"
        res = subprocess.run([sys.executable, "-c", _EPOCH_SNIPPET], env=env, capture_output=True,
                             text=True, check=True)
        row = json.loads(res.stdout)
        out[row.pop("backend")] = row
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kernels", action="store_true", help="skip the per-epoch comparison")
    args = ap.parse_args(argv)
    names = list(BACKENDS)
    if "compiled" not in BACKENDS:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel (us/call)':<22}" + "".join(f"{n:>12}" for n in names) + ("    speedup" if len(names) > 1 else ""))
    for name, t in kernel_table():
        line = f"{name:<22}" + "".join(f"{t[n]:>12.1f}" for n in names)
        if len(names) > 1:
            line += f"{t['python'] / t['compiled']:>10.2f}x"
        print(line)
    if not args.kernels:
        ep = epoch_table()
        print()
        print(f"{'epoch, 40+40+40 graphs (s)':<28}" + "".join(f"{n:>10}" for n in ep))
        for phase in ("pretrain_ae", "pretrain_trans", "pretrain_mi", "finetune"):
            print(f"{phase:<28}" + "".join(f"{ep[n][phase]:>10.3f}" for n in ep))
    return 0


if __name__ == "__main__":
    sys.exit(main())
