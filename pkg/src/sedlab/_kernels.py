"""Numba-compiled inner loops for the convolution family.

Every kernel assigns each output block to exactly one thread, so results are
bit-reproducible for any thread count. Inputs arrive pre-padded; padding
geometry lives in the callers (ops.py, freq_conv.py).

Shapes use B=batch, C/O=in/out channels, F/T=frequency/time, K=basis count.
`xp` denotes a zero-padded input of shape [B, C, F + kF - 1, T + kT - 1].
"""

import numba
import numpy as np

# omp is present and version-stable in this image; tbb emits a version warning
numba.config.THREADING_LAYER = "omp"

__all__ = [
    "conv2d_fwd",
    "conv2d_bwd_x",
    "conv2d_bwd_w",
    "fk_fwd",
    "fk_bwd_x",
    "fk_bwd_w",
    "mix_fwd",
    "mix_bwd_y",
    "mix_bwd_w",
    "set_num_threads",
]


def set_num_threads(n: int) -> None:
    numba.set_num_threads(n)


@numba.njit(parallel=True, fastmath=True, cache=True)
def conv2d_fwd(xp, w, out):
    B, C, Fp, Tp = xp.shape
    O, _, kF, kT = w.shape
    _, _, F, T = out.shape
    for bo in numba.prange(B * O):
        b = bo // O
        o = bo % O
        acc = np.zeros((F, T), xp.dtype)
        for c in range(C):
            for di in range(kF):
                for dj in range(kT):
                    wv = w[o, c, di, dj]
                    if wv == 0.0:
                        continue
                    for f in range(F):
                        for t in range(T):
                            acc[f, t] += wv * xp[b, c, f + di, t + dj]
        out[b, o] = acc


@numba.njit(parallel=True, fastmath=True, cache=True)
def conv2d_bwd_x(go, w, gxp):
    B, O, F, T = go.shape
    _, C, kF, kT = w.shape
    for bc in numba.prange(B * C):
        b = bc // C
        c = bc % C
        for o in range(O):
            for di in range(kF):
                for dj in range(kT):
                    wv = w[o, c, di, dj]
                    if wv == 0.0:
                        continue
                    for f in range(F):
                        for t in range(T):
                            gxp[b, c, f + di, t + dj] += wv * go[b, o, f, t]


@numba.njit(parallel=True, fastmath=True, cache=True)
def conv2d_bwd_w(xp, go, gw):
    B, O, F, T = go.shape
    _, C, kF, kT = gw.shape
    for oc in numba.prange(O * C):
        o = oc // C
        c = oc % C
        for di in range(kF):
            for dj in range(kT):
                s = 0.0
                for b in range(B):
                    for f in range(F):
                        for t in range(T):
                            s += xp[b, c, f + di, t + dj] * go[b, o, f, t]
                gw[o, c, di, dj] = s


@numba.njit(parallel=True, fastmath=True, cache=True)
def fk_fwd(xp, w, out):
    # w: [F, O, C, kF, kT]; output row f is convolved with kernel f only.
    B, C, Fp, Tp = xp.shape
    F, O, _, kF, kT = w.shape
    T = out.shape[3]
    for bo in numba.prange(B * O):
        b = bo // O
        o = bo % O
        for f in range(F):
            acc = np.zeros(T, xp.dtype)
            for c in range(C):
                for di in range(kF):
                    for dj in range(kT):
                        wv = w[f, o, c, di, dj]
                        if wv == 0.0:
                            continue
                        for t in range(T):
                            acc[t] += wv * xp[b, c, f + di, t + dj]
            out[b, o, f] = acc


@numba.njit(parallel=True, fastmath=True, cache=True)
def fk_bwd_x(go, w, gxp):
    B, O, F, T = go.shape
    _, _, C, kF, kT = w.shape
    for bc in numba.prange(B * C):
        b = bc // C
        c = bc % C
        for o in range(O):
            for f in range(F):
                for di in range(kF):
                    for dj in range(kT):
                        wv = w[f, o, c, di, dj]
                        if wv == 0.0:
                            continue
                        for t in range(T):
                            gxp[b, c, f + di, t + dj] += wv * go[b, o, f, t]


@numba.njit(parallel=True, fastmath=True, cache=True)
def fk_bwd_w(xp, go, gw):
    B, O, F, T = go.shape
    _, _, C, kF, kT = gw.shape
    for oc in numba.prange(O * C):
        o = oc // C
        c = oc % C
        for f in range(F):
            for di in range(kF):
                for dj in range(kT):
                    s = 0.0
                    for b in range(B):
                        for t in range(T):
                            s += xp[b, c, f + di, t + dj] * go[b, o, f, t]
                    gw[f, o, c, di, dj] = s


@numba.njit(parallel=True, fastmath=True, cache=True)
def mix_fwd(y, wt, out):
    # y: [B, K, O, F, T] stacked per-basis conv outputs; wt: [B, K, F].
    B, K, O, F, T = y.shape
    for bo in numba.prange(B * O):
        b = bo // O
        o = bo % O
        acc = np.zeros((F, T), y.dtype)
        for k in range(K):
            for f in range(F):
                wv = wt[b, k, f]
                for t in range(T):
                    acc[f, t] += wv * y[b, k, o, f, t]
        out[b, o] = acc


@numba.njit(parallel=True, fastmath=True, cache=True)
def mix_bwd_y(go, wt, gy):
    B, K, O, F, T = gy.shape
    for bk in numba.prange(B * K):
        b = bk // K
        k = bk % K
        for o in range(O):
            for f in range(F):
                wv = wt[b, k, f]
                for t in range(T):
                    gy[b, k, o, f, t] = wv * go[b, o, f, t]


@numba.njit(parallel=True, fastmath=True, cache=True)
def mix_bwd_w(go, y, gwt):
    B, K, O, F, T = y.shape
    for bk in numba.prange(B * K):
        b = bk // K
        k = bk % K
        for f in range(F):
            s = 0.0
            for o in range(O):
                for t in range(T):
                    s += y[b, k, o, f, t] * go[b, o, f, t]
            gwt[b, k, f] = s
