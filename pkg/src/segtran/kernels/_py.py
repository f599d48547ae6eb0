"""Pure-Python/numpy reference kernels.  Same signatures as the compiled module."""

from __future__ import annotations

from collections import deque

import numpy as np


def hop_distances(adjacency: np.ndarray) -> np.ndarray:
    """All-pairs BFS hop counts; -1 marks unreachable pairs."""
    n = adjacency.shape[0]
    nbrs = [np.flatnonzero(adjacency[i]).tolist() for i in range(n)]
    out = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        row = out[s]
        row[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            du = row[u] + 1
            for w in nbrs[u]:
                if row[w] < 0:
                    row[w] = du
                    q.append(w)
    return out


def mp_block_forward(x, agg, w, b, skip):
    """Returns (out, cat) with out = [relu(cat·W + b), skip] and cat = [x, agg·x]."""
    cat = np.concatenate([x, agg @ x], axis=1)
    pre = cat @ w
    pre += b.reshape(1, -1)
    np.maximum(pre, 0.0, out=pre)
    return np.concatenate([pre, skip], axis=1), cat


def mp_block_backward(g, agg, w, cat, out, need_x):
    """Returns (g_x or None, g_W, g_b)."""
    d_out = w.shape[1]
    d = cat.shape[1] // 2
    gp = g[:, :d_out] * (out[:, :d_out] > 0)
    gc = gp @ w.T
    gx = gc[:, :d] + agg.T @ gc[:, d:] if need_x else None
    return gx, cat.T @ gp, gp.sum(axis=0)


def mha_forward(p, h, wq, wk, wv, wo):
    """Multi-head attention.  Returns (out, cache) or raises FloatingPointError
    on non-finite attention logits."""
    nh, d_p, d_k = wq.shape
    d_v = wv.shape[2]
    n = p.shape[0]
    scale = 1.0 / np.sqrt(d_k)
    WQ = wq.transpose(1, 0, 2).reshape(d_p, nh * d_k)
    WK = wk.transpose(1, 0, 2).reshape(d_p, nh * d_k)
    WV = wv.transpose(1, 0, 2).reshape(-1, nh * d_v)
    Q = (p @ WQ).reshape(n, nh, d_k).transpose(1, 0, 2)
    K = (p @ WK).reshape(n, nh, d_k).transpose(1, 0, 2)
    V = (h @ WV).reshape(n, nh, d_v).transpose(1, 0, 2)
    logits = np.matmul(Q, K.transpose(0, 2, 1))
    logits *= scale
    if not np.isfinite(logits).all():
        raise FloatingPointError("non-finite attention scores")
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    A = z / z.sum(axis=-1, keepdims=True)
    C = np.matmul(A, V).transpose(1, 0, 2).reshape(n, nh * d_v)
    return C @ wo, (Q, K, V, A, C)


def mha_backward(g, p, h, wq, wk, wv, wo, cache, need_p, need_h):
    """Returns (g_p, g_h, g_wq, g_wk, g_wv, g_wo); g_p/g_h are None when not needed."""
    Q, K, V, A, C = cache
    nh, d_p, d_k = wq.shape
    d_v = wv.shape[2]
    n = p.shape[0]
    scale = 1.0 / np.sqrt(d_k)

    def heads(x, w):
        return x.transpose(1, 0, 2).reshape(n, nh * w)

    def stack(flat, rows, w):
        return flat.reshape(rows, nh, w).transpose(1, 0, 2)

    g_wo = C.T @ g
    dO = stack(g @ wo.T, n, d_v)
    dA = np.matmul(dO, V.transpose(0, 2, 1))
    dV = heads(np.matmul(A.transpose(0, 2, 1), dO), d_v)
    dL = A * (dA - (dA * A).sum(axis=-1, keepdims=True))
    dL *= scale
    dQ = heads(np.matmul(dL, K), d_k)
    dK = heads(np.matmul(dL.transpose(0, 2, 1), Q), d_k)
    g_wq = stack(p.T @ dQ, d_p, d_k)
    g_wk = stack(p.T @ dK, d_p, d_k)
    g_wv = stack(h.T @ dV, h.shape[1], d_v)
    g_p = g_h = None
    if need_p:
        g_p = dQ @ wq.transpose(1, 0, 2).reshape(d_p, -1).T + dK @ wk.transpose(1, 0, 2).reshape(d_p, -1).T
    if need_h:
        g_h = dV @ wv.transpose(1, 0, 2).reshape(h.shape[1], -1).T
    return g_p, g_h, g_wq, g_wk, g_wv, g_wo


def attention_weights(cache):
    return cache[3]


def adam_update(data, grad, m, v, lr, b1, b2, eps, c1, c2):
    """In-place bias-corrected Adam update of one parameter array."""
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * (grad * grad)
    data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
