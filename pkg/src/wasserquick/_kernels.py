"""Inner-loop recursion kernels for the Monte Carlo engines.

Each kernel advances a batch of replications through one chunk of
observations, recording 1-based stopping times in `stops` (-1 = still
running). The numba versions and the numpy fallbacks perform the same IEEE
operations in the same order, so results are identical either way.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _cusum_chunk_py(L, S, stops, t0, b):
    A, k = L.shape
    for j in range(k):
        active = stops < 0
        if not active.any():
            break
        s = np.maximum(S[active], 0.0) + L[active, j]
        S[active] = s
        hit = np.where(active)[0][s >= b]
        stops[hit] = t0 + j + 1


def _glr_chunk_py(X, cs_hist, t0, b, stops, stats):
    A, k = X.shape
    Wp2 = cs_hist.shape[1]
    for i in range(A):
        if stops[i] >= 0:
            continue
        for j in range(k):
            t = t0 + j + 1
            c = cs_hist[i, Wp2 - 1] + X[i, j]
            cs_hist[i, : Wp2 - 1] = cs_hist[i, 1:]
            cs_hist[i, Wp2 - 1] = c
            nback = t if t < Wp2 - 1 else Wp2 - 1
            best = 0.0
            for s in range(1, nback + 1):
                d = c - cs_hist[i, Wp2 - 1 - s]
                v = d * d / (2.0 * s)
                if v > best:
                    best = v
            stats[i] = best
            if best >= b:
                stops[i] = t
                break


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _cusum_chunk_nb(L, S, stops, t0, b):  # pragma: no cover - jit
        A, k = L.shape
        for i in range(A):
            if stops[i] >= 0:
                continue
            s = S[i]
            for j in range(k):
                s = max(s, 0.0) + L[i, j]
                if s >= b:
                    stops[i] = t0 + j + 1
                    break
            S[i] = s

    @numba.njit(cache=True)
    def _glr_chunk_nb(X, cs_hist, t0, b, stops, stats):  # pragma: no cover - jit
        A, k = X.shape
        Wp2 = cs_hist.shape[1]
        for i in range(A):
            if stops[i] >= 0:
                continue
            for j in range(k):
                t = t0 + j + 1
                c = cs_hist[i, Wp2 - 1] + X[i, j]
                for q in range(Wp2 - 1):
                    cs_hist[i, q] = cs_hist[i, q + 1]
                cs_hist[i, Wp2 - 1] = c
                nback = t if t < Wp2 - 1 else Wp2 - 1
                best = 0.0
                for s in range(1, nback + 1):
                    d = c - cs_hist[i, Wp2 - 1 - s]
                    v = d * d / (2.0 * s)
                    if v > best:
                        best = v
                stats[i] = best
                if best >= b:
                    stops[i] = t
                    break

    cusum_chunk = _cusum_chunk_nb
    glr_chunk = _glr_chunk_nb
else:  # pragma: no cover
    cusum_chunk = _cusum_chunk_py
    glr_chunk = _glr_chunk_py
