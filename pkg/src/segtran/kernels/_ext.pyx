# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Mirrors ``_py`` call for call; matrix products go
through BLAS dgemm with row-major operands."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, isfinite, sqrt
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void mm(bint ta, bint tb, int m, int n, int k, double alpha,
                    double* a, int lda, double* b, int ldb,
                    double beta, double* c, int ldc) noexcept nogil:
    # row-major C[m, n] = alpha op(A) op(B) + beta C, as the column-major C^T = op(B)^T op(A)^T
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    if m == 0 or n == 0:
        return
    dgemm(&cb, &ca, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


cdef inline cnp.ndarray _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def hop_distances(adjacency):
    """All-pairs BFS hop counts; -1 marks unreachable pairs."""
    cdef double[:, ::1] adj = _c(adjacency)
    cdef Py_ssize_t n = adj.shape[0]
    out_arr = np.full((n, n), -1, dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    cdef long long[::1] queue = np.empty(max(n, 1), dtype=np.int64)
    cdef Py_ssize_t s, head, tail, u, w
    with nogil:
        for s in range(n):
            out[s, s] = 0
            queue[0] = s
            head = 0
            tail = 1
            while head < tail:
                u = queue[head]
                head += 1
                for w in range(n):
                    if adj[u, w] != 0 and out[s, w] < 0:
                        out[s, w] = out[s, u] + 1
                        queue[tail] = w
                        tail += 1
    return out_arr


def mp_block_forward(x, agg, w, b, skip):
    """Returns (out, cat) with out = [relu(cat·W + b), skip] and cat = [x, agg·x]."""
    cdef double[:, ::1] X = _c(x)
    cdef double[:, ::1] G = _c(agg)
    cdef double[:, ::1] W = _c(w)
    cdef double[::1] B = _c(b).reshape(-1)
    cdef double[:, ::1] S = _c(skip)
    cdef int n = X.shape[0], d = X.shape[1], do = W.shape[1], ds = S.shape[1]
    cdef int width = do + ds
    cat_arr = np.empty((n, 2 * d))
    out_arr = np.empty((n, width))
    cdef double[:, ::1] cat = cat_arr
    cdef double[:, ::1] out = out_arr
    cdef int i, j
    cdef double v
    with nogil:
        for i in range(n):
            if d:
                memcpy(&cat[i, 0], &X[i, 0], d * sizeof(double))
            if ds:
                memcpy(&out[i, do], &S[i, 0], ds * sizeof(double))
        if n and d:
            mm(0, 0, n, d, n, 1.0, &G[0, 0], n, &X[0, 0], d, 0.0, &cat[0, d], 2 * d)
            mm(0, 0, n, do, 2 * d, 1.0, &cat[0, 0], 2 * d, &W[0, 0], do, 0.0, &out[0, 0], width)
        for i in range(n):
            for j in range(do):
                v = out[i, j] + B[j]
                out[i, j] = v if v > 0 else 0.0
    return out_arr, cat_arr


def mp_block_backward(g, agg, w, cat, out, bint need_x):
    """Returns (g_x or None, g_W, g_b)."""
    cdef double[:, ::1] Gr = _c(g)
    cdef double[:, ::1] G = _c(agg)
    cdef double[:, ::1] W = _c(w)
    cdef double[:, ::1] CAT = _c(cat)
    cdef double[:, ::1] OUT = _c(out)
    cdef int n = CAT.shape[0], d2 = CAT.shape[1], do = W.shape[1], width = OUT.shape[1]
    cdef int d = d2 // 2
    gp_arr = np.empty((n, do))
    gw_arr = np.empty((d2, do))
    gb_arr = np.zeros(do)
    cdef double[:, ::1] gp = gp_arr
    cdef double[:, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef double[:, ::1] gc
    cdef double[:, ::1] gx
    cdef int i, j
    for i in range(n):
        for j in range(do):
            gp[i, j] = Gr[i, j] if OUT[i, j] > 0 else 0.0
            gb[j] += gp[i, j]
    if n:
        mm(1, 0, d2, do, n, 1.0, &CAT[0, 0], d2, &gp[0, 0], do, 0.0, &gw[0, 0], do)
    else:
        gw_arr[...] = 0.0
    if not need_x:
        return None, gw_arr, gb_arr
    gc_arr = np.empty((n, d2))
    gx_arr = np.empty((n, d))
    gc = gc_arr
    gx = gx_arr
    if n and d:
        mm(0, 1, n, d2, do, 1.0, &gp[0, 0], do, &W[0, 0], do, 0.0, &gc[0, 0], d2)
        for i in range(n):
            memcpy(&gx[i, 0], &gc[i, 0], d * sizeof(double))
        mm(1, 0, n, d, n, 1.0, &G[0, 0], n, &gc[0, d], d2, 1.0, &gx[0, 0], d)
    return gx_arr, gw_arr, gb_arr


def mha_forward(p, h, wq, wk, wv, wo):
    """Multi-head attention.  Returns (out, cache) or raises FloatingPointError
    on non-finite attention logits."""
    cdef double[:, ::1] P = _c(p)
    cdef double[:, ::1] H = _c(h)
    cdef double[:, :, ::1] WQ = _c(wq)
    cdef double[:, :, ::1] WK = _c(wk)
    cdef double[:, :, ::1] WV = _c(wv)
    cdef double[:, ::1] WO = _c(wo)
    cdef int nh = WQ.shape[0], dp = WQ.shape[1], dk = WQ.shape[2]
    cdef int dh = WV.shape[1], dv = WV.shape[2], dout = WO.shape[1]
    cdef int n = P.shape[0]
    cdef double scale = 1.0 / sqrt(dk)
    q_arr = np.empty((nh, n, dk))
    k_arr = np.empty((nh, n, dk))
    v_arr = np.empty((nh, n, dv))
    a_arr = np.empty((nh, n, n))
    c_arr = np.empty((n, nh * dv))
    out_arr = np.empty((n, dout))
    cdef double[:, :, ::1] Q = q_arr
    cdef double[:, :, ::1] K = k_arr
    cdef double[:, :, ::1] V = v_arr
    cdef double[:, :, ::1] A = a_arr
    cdef double[:, ::1] C = c_arr
    cdef double[:, ::1] OUT = out_arr
    cdef int hd, i, j
    cdef bint bad = 0
    cdef double mx, tot
    if n == 0:
        return out_arr, (q_arr, k_arr, v_arr, a_arr, c_arr)
    with nogil:
        for hd in range(nh):
            mm(0, 0, n, dk, dp, 1.0, &P[0, 0], dp, &WQ[hd, 0, 0], dk, 0.0, &Q[hd, 0, 0], dk)
            mm(0, 0, n, dk, dp, 1.0, &P[0, 0], dp, &WK[hd, 0, 0], dk, 0.0, &K[hd, 0, 0], dk)
            mm(0, 0, n, dv, dh, 1.0, &H[0, 0], dh, &WV[hd, 0, 0], dv, 0.0, &V[hd, 0, 0], dv)
            mm(0, 1, n, n, dk, scale, &Q[hd, 0, 0], dk, &K[hd, 0, 0], dk, 0.0, &A[hd, 0, 0], n)
            for i in range(n):
                mx = A[hd, i, 0]
                for j in range(n):
                    if not isfinite(A[hd, i, j]):
                        bad = 1
                    if A[hd, i, j] > mx:
                        mx = A[hd, i, j]
                tot = 0.0
                for j in range(n):
                    A[hd, i, j] = exp(A[hd, i, j] - mx)
                    tot += A[hd, i, j]
                for j in range(n):
                    A[hd, i, j] /= tot
            if bad:
                break
            mm(0, 0, n, dv, n, 1.0, &A[hd, 0, 0], n, &V[hd, 0, 0], dv, 0.0, &C[0, hd * dv], nh * dv)
        if not bad:
            mm(0, 0, n, dout, nh * dv, 1.0, &C[0, 0], nh * dv, &WO[0, 0], dout, 0.0, &OUT[0, 0], dout)
    if bad:
        raise FloatingPointError("non-finite attention scores")
    return out_arr, (q_arr, k_arr, v_arr, a_arr, c_arr)


def mha_backward(g, p, h, wq, wk, wv, wo, cache, bint need_p, bint need_h):
    """Returns (g_p, g_h, g_wq, g_wk, g_wv, g_wo); g_p/g_h are None when not needed."""
    cdef double[:, ::1] Gr = _c(g)
    cdef double[:, ::1] P = _c(p)
    cdef double[:, ::1] H = _c(h)
    cdef double[:, :, ::1] WQ = _c(wq)
    cdef double[:, :, ::1] WK = _c(wk)
    cdef double[:, :, ::1] WV = _c(wv)
    cdef double[:, ::1] WO = _c(wo)
    cdef double[:, :, ::1] Q = cache[0]
    cdef double[:, :, ::1] K = cache[1]
    cdef double[:, :, ::1] V = cache[2]
    cdef double[:, :, ::1] A = cache[3]
    cdef double[:, ::1] C = cache[4]
    cdef int nh = WQ.shape[0], dp = WQ.shape[1], dk = WQ.shape[2]
    cdef int dh = WV.shape[1], dv = WV.shape[2], dout = WO.shape[1]
    cdef int n = P.shape[0], hv = nh * dv
    cdef double scale = 1.0 / sqrt(dk)
    gwq_arr = np.zeros((nh, dp, dk))
    gwk_arr = np.zeros((nh, dp, dk))
    gwv_arr = np.zeros((nh, dh, dv))
    gwo_arr = np.zeros((hv, dout))
    gp_arr = np.zeros((n, dp))
    gh_arr = np.zeros((n, dh))
    dc_arr = np.empty((n, hv))
    da_arr = np.empty((n, n))
    dv_arr = np.empty((n, dv))
    dq_arr = np.empty((n, dk))
    dkk_arr = np.empty((n, dk))
    cdef double[:, :, ::1] gwq = gwq_arr
    cdef double[:, :, ::1] gwk = gwk_arr
    cdef double[:, :, ::1] gwv = gwv_arr
    cdef double[:, ::1] gwo = gwo_arr
    cdef double[:, ::1] gp = gp_arr
    cdef double[:, ::1] gh = gh_arr
    cdef double[:, ::1] dC = dc_arr
    cdef double[:, ::1] dA = da_arr
    cdef double[:, ::1] dV = dv_arr
    cdef double[:, ::1] dQ = dq_arr
    cdef double[:, ::1] dK = dkk_arr
    cdef int hd, i, j
    cdef double s
    if n == 0:
        return (gp_arr if need_p else None, gh_arr if need_h else None,
                gwq_arr, gwk_arr, gwv_arr, gwo_arr)
    with nogil:
        mm(1, 0, hv, dout, n, 1.0, &C[0, 0], hv, &Gr[0, 0], dout, 0.0, &gwo[0, 0], dout)
        mm(0, 1, n, hv, dout, 1.0, &Gr[0, 0], dout, &WO[0, 0], dout, 0.0, &dC[0, 0], hv)
        for hd in range(nh):
            mm(0, 1, n, n, dv, 1.0, &dC[0, hd * dv], hv, &V[hd, 0, 0], dv, 0.0, &dA[0, 0], n)
            mm(1, 0, n, dv, n, 1.0, &A[hd, 0, 0], n, &dC[0, hd * dv], hv, 0.0, &dV[0, 0], dv)
            for i in range(n):
                s = 0.0
                for j in range(n):
                    s += dA[i, j] * A[hd, i, j]
                for j in range(n):
                    dA[i, j] = A[hd, i, j] * (dA[i, j] - s) * scale
            mm(0, 0, n, dk, n, 1.0, &dA[0, 0], n, &K[hd, 0, 0], dk, 0.0, &dQ[0, 0], dk)
            mm(1, 0, n, dk, n, 1.0, &dA[0, 0], n, &Q[hd, 0, 0], dk, 0.0, &dK[0, 0], dk)
            mm(1, 0, dp, dk, n, 1.0, &P[0, 0], dp, &dQ[0, 0], dk, 0.0, &gwq[hd, 0, 0], dk)
            mm(1, 0, dp, dk, n, 1.0, &P[0, 0], dp, &dK[0, 0], dk, 0.0, &gwk[hd, 0, 0], dk)
            mm(1, 0, dh, dv, n, 1.0, &H[0, 0], dh, &dV[0, 0], dv, 0.0, &gwv[hd, 0, 0], dv)
            if need_p:
                mm(0, 1, n, dp, dk, 1.0, &dQ[0, 0], dk, &WQ[hd, 0, 0], dk, 1.0, &gp[0, 0], dp)
                mm(0, 1, n, dp, dk, 1.0, &dK[0, 0], dk, &WK[hd, 0, 0], dk, 1.0, &gp[0, 0], dp)
            if need_h:
                mm(0, 1, n, dh, dv, 1.0, &dV[0, 0], dv, &WV[hd, 0, 0], dv, 1.0, &gh[0, 0], dh)
    return (gp_arr if need_p else None, gh_arr if need_h else None,
            gwq_arr, gwk_arr, gwv_arr, gwo_arr)


def attention_weights(cache):
    return cache[3]


def adam_update(data, grad, m, v, double lr, double b1, double b2, double eps, double c1, double c2):
    """In-place bias-corrected Adam update of one parameter array."""
    for arr in (data, m, v):
        if not (isinstance(arr, np.ndarray) and arr.dtype == np.float64 and arr.flags.c_contiguous):
            raise ValueError("adam_update needs C-contiguous float64 arrays for in-place update")
    cdef double[::1] D = data.reshape(-1)
    cdef double[::1] G = _c(grad).reshape(-1)
    cdef double[::1] M = m.reshape(-1)
    cdef double[::1] Vv = v.reshape(-1)
    cdef Py_ssize_t i, size = D.shape[0]
    cdef double gi
    with nogil:
        for i in range(size):
            gi = G[i]
            M[i] = b1 * M[i] + (1.0 - b1) * gi
            Vv[i] = b2 * Vv[i] + (1.0 - b2) * gi * gi
            D[i] -= lr * (M[i] / c1) / (sqrt(Vv[i] / c2) + eps)
