"""Numba kernels behind the hot paths.

Everything here is an implementation detail; each kernel is cross-checked
against an independent numpy or pure-Python oracle in the test suite.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def bank_filter(x, a0s, a1s, b1s, b2s):
    """Cascade-of-biquads filterbank, one output row per channel.

    Coefficient layout is (sections, channels) so the channel loop is the
    innermost, contiguous one. States are float64 for stability; output is
    float32 (consumed by the statistics kernels).
    """
    nsct, nch = a0s.shape
    n = x.shape[0]
    out = np.empty((nch, n), dtype=np.float32)
    s1 = np.zeros((nsct, nch))
    s2 = np.zeros((nsct, nch))
    v = np.empty(nch)
    for t in range(n):
        xt = x[t]
        for c in range(nch):
            y = a0s[0, c] * xt + s1[0, c]
            s1[0, c] = a1s[0, c] * xt - b1s[c] * y + s2[0, c]
            s2[0, c] = -b2s[c] * y
            v[c] = y
        for sct in range(1, nsct - 1):
            for c in range(nch):
                y = a0s[sct, c] * v[c] + s1[sct, c]
                s1[sct, c] = a1s[sct, c] * v[c] - b1s[c] * y + s2[sct, c]
                s2[sct, c] = -b2s[c] * y
                v[c] = y
        sct = nsct - 1
        for c in range(nch):
            y = a0s[sct, c] * v[c] + s1[sct, c]
            s1[sct, c] = a1s[sct, c] * v[c] - b1s[c] * y + s2[sct, c]
            s2[sct, c] = -b2s[c] * y
            out[c, t] = np.float32(y)
    return out


@njit(cache=True)
def _rank_keys(bits, ranks, out_keys):
    # Exact order statistics over float32 data given as raw uint32 bit
    # patterns, via a two-level 16-bit histogram (radix select) on the
    # monotone-mapped keys. O(n) for any value distribution.
    n = bits.shape[0]
    hist = np.zeros(65536, dtype=np.int64)
    for i in range(n):
        b32 = bits[i]
        key = b32 ^ (np.uint32(0x80000000) + (b32 >> np.uint32(31))
                     * np.uint32(0x7FFFFFFF))
        hist[key >> np.uint32(16)] += 1
    nr = ranks.shape[0]
    ri = 0
    cum = 0
    b = 0
    while ri < nr and b < 65536:
        nxt = cum + hist[b]
        if ranks[ri] < nxt:
            lo_hist = np.zeros(65536, dtype=np.int64)
            for i in range(n):
                b32 = bits[i]
                key = b32 ^ (np.uint32(0x80000000) + (b32 >> np.uint32(31))
                             * np.uint32(0x7FFFFFFF))
                if (key >> np.uint32(16)) == np.uint32(b):
                    lo_hist[key & np.uint32(0xFFFF)] += 1
            c2 = cum
            lb = 0
            while ri < nr and ranks[ri] < nxt:
                while c2 + lo_hist[lb] <= ranks[ri]:
                    c2 += lo_hist[lb]
                    lb += 1
                out_keys[ri] = (np.uint32(b) << np.uint32(16)) | np.uint32(lb)
                ri += 1
        cum = nxt
        b += 1


@njit(cache=True)
def matrix_moment_stats(x32):
    """Per-row [mean, std, skew, excess kurtosis, min, max, l2] of a float32
    matrix, accumulated in float64 (population moments; zero-variance rows
    get skew = kurtosis = 0)."""
    nr, n = x32.shape
    out = np.empty((nr, 7))
    for r in range(nr):
        # four-way independent accumulators keep the reduction off the
        # serial dependency chain (summation order is a package-internal
        # convention; bin_statistics agreement is pinned at 1e-12)
        s0 = s1 = s2 = s3 = 0.0
        q0 = q1 = q2 = q3 = 0.0
        mn = np.float64(x32[r, 0])
        mx = np.float64(x32[r, 0])
        n4 = n - (n & 3)
        for i in range(0, n4, 4):
            v0 = np.float64(x32[r, i])
            v1 = np.float64(x32[r, i + 1])
            v2 = np.float64(x32[r, i + 2])
            v3 = np.float64(x32[r, i + 3])
            s0 += v0
            s1 += v1
            s2 += v2
            s3 += v3
            q0 += v0 * v0
            q1 += v1 * v1
            q2 += v2 * v2
            q3 += v3 * v3
            if v0 < mn:
                mn = v0
            if v0 > mx:
                mx = v0
            if v1 < mn:
                mn = v1
            if v1 > mx:
                mx = v1
            if v2 < mn:
                mn = v2
            if v2 > mx:
                mx = v2
            if v3 < mn:
                mn = v3
            if v3 > mx:
                mx = v3
        for i in range(n4, n):
            v = np.float64(x32[r, i])
            s0 += v
            q0 += v * v
            if v < mn:
                mn = v
            if v > mx:
                mx = v
        s = (s0 + s1) + (s2 + s3)
        ss = (q0 + q1) + (q2 + q3)
        mean = s / n
        m2a = m2b = 0.0
        m3a = m3b = 0.0
        m4a = m4b = 0.0
        n2 = n - (n & 1)
        for i in range(0, n2, 2):
            da = np.float64(x32[r, i]) - mean
            db = np.float64(x32[r, i + 1]) - mean
            d2a = da * da
            d2b = db * db
            m2a += d2a
            m2b += d2b
            m3a += d2a * da
            m3b += d2b * db
            m4a += d2a * d2a
            m4b += d2b * d2b
        if n2 < n:
            d = np.float64(x32[r, n2]) - mean
            d2 = d * d
            m2a += d2
            m3a += d2 * d
            m4a += d2 * d2
        m2 = (m2a + m2b) / n
        m3 = (m3a + m3b) / n
        m4 = (m4a + m4b) / n
        if m2 > 0.0:
            skew = m3 / m2 ** 1.5
            kurt = m4 / (m2 * m2) - 3.0
        else:
            skew = 0.0
            kurt = 0.0
        out[r, 0] = mean
        out[r, 1] = np.sqrt(m2)
        out[r, 2] = skew
        out[r, 3] = kurt
        out[r, 4] = mn
        out[r, 5] = mx
        out[r, 6] = np.sqrt(ss)
    return out


@njit(cache=True)
def matrix_rank_stats(bits, klo, khi):
    """Per-row rank elements (as monotone keys) at the six quartile ranks.

    bits: (rows, n) float32 data viewed as uint32; klo/khi: floor/ceil
    ranks for the three quartile positions. Returns (rows, 3, 2) keys.
    """
    nr = bits.shape[0]
    ranks = np.empty(6, dtype=np.int64)
    for q in range(3):
        ranks[2 * q] = klo[q]
        ranks[2 * q + 1] = khi[q]
    out = np.empty((nr, 6), dtype=np.uint32)
    for r in range(nr):
        _rank_keys(bits[r], ranks, out[r])
    return out.reshape(nr, 3, 2)


@njit(cache=True)
def grid_sweep_auc(S, y, N):
    """Exhaustive AUC over the 4-weight simplex grid {multiples of 1/N}.

    Grid points are visited in lexicographic (i, j, k, l) order; the first
    strict improvement wins, which realizes the lexicographic tie-break.
    Scores along the innermost axis are maintained incrementally and the
    sorted order repaired by insertion, with the Mann-Whitney pair count
    updated per label-crossing swap; candidates where exact score ties
    exist fall back to a full tie-aware recount.
    Returns (best_count, n_pos, n_neg, i, j, k, l).
    """
    n = S.shape[0]
    step = 1.0 / N
    npos = 0
    for a in range(n):
        if y[a]:
            npos += 1
    sv = np.empty(n)
    sl = np.empty(n, dtype=np.uint8)
    dv = np.empty(n)
    p = np.empty(n)
    d34 = np.empty(n)
    for a in range(n):
        d34[a] = step * (S[a, 2] - S[a, 3])
    best_count = -1.0
    bi = bj = bk = -1
    for i in range(N + 1):
        for j in range(N + 1 - i):
            M = N - i - j
            for a in range(n):
                p[a] = step * (i * S[a, 0] + j * S[a, 1] + M * S[a, 3])
            order = np.argsort(p)
            for t in range(n):
                a = order[t]
                sv[t] = p[a]
                sl[t] = 1 if y[a] else 0
                dv[t] = d34[a]
            c = 0.0
            neg_below = 0.0
            t = 0
            ties = False
            while t < n:
                u = t
                gp = 0.0
                gn = 0.0
                v = sv[t]
                while u < n and sv[u] == v:
                    if sl[u]:
                        gp += 1.0
                    else:
                        gn += 1.0
                    u += 1
                if u - t > 1:
                    ties = True
                c += gp * neg_below + 0.5 * gp * gn
                neg_below += gn
                t = u
            if c > best_count:
                best_count = c
                bi, bj, bk = i, j, 0
            prev_ties = ties
            for k in range(1, M + 1):
                delta = 0.0
                ties = False
                for t in range(n):
                    v = sv[t] + dv[t]
                    s = t - 1
                    if s >= 0 and sv[s] > v:
                        la = sl[t]
                        da = dv[t]
                        while s >= 0 and sv[s] > v:
                            lb = sl[s]
                            if lb != la:
                                if la:
                                    delta -= 1.0
                                else:
                                    delta += 1.0
                            sv[s + 1] = sv[s]
                            sl[s + 1] = lb
                            dv[s + 1] = dv[s]
                            s -= 1
                        sv[s + 1] = v
                        sl[s + 1] = la
                        dv[s + 1] = da
                        if s >= 0 and sv[s] == v:
                            ties = True
                    else:
                        sv[t] = v
                        if s >= 0 and sv[s] == v:
                            ties = True
                c += delta
                if ties or prev_ties:
                    c = 0.0
                    neg_below = 0.0
                    t = 0
                    while t < n:
                        u = t
                        gp = 0.0
                        gn = 0.0
                        v = sv[t]
                        while u < n and sv[u] == v:
                            if sl[u]:
                                gp += 1.0
                            else:
                                gn += 1.0
                            u += 1
                        c += gp * neg_below + 0.5 * gp * gn
                        neg_below += gn
                        t = u
                prev_ties = ties
                if c > best_count:
                    best_count = c
                    bi, bj, bk = i, j, k
    return best_count, npos, n - npos, bi, bj, bk, N - bi - bj - bk


@njit(cache=True)
def grid_sweep_mcc(S, y, N, threshold):
    """Exhaustive MCC (binarized at `threshold`) over the simplex grid.

    Same traversal and incremental score maintenance as grid_sweep_auc;
    the confusion counts are recomputed per candidate (O(n), no sorting).
    Returns (best_mcc, i, j, k, l).
    """
    n = S.shape[0]
    step = 1.0 / N
    p = np.empty(n)
    d34 = np.empty(n)
    for a in range(n):
        d34[a] = step * (S[a, 2] - S[a, 3])
    best = -2.0
    bi = bj = bk = -1
    for i in range(N + 1):
        for j in range(N + 1 - i):
            M = N - i - j
            for a in range(n):
                p[a] = step * (i * S[a, 0] + j * S[a, 1] + M * S[a, 3])
            for k in range(M + 1):
                if k > 0:
                    for a in range(n):
                        p[a] += d34[a]
                tp = 0
                fp = 0
                fn = 0
                tn = 0
                for a in range(n):
                    pred = p[a] >= threshold
                    if y[a]:
                        if pred:
                            tp += 1
                        else:
                            fn += 1
                    else:
                        if pred:
                            fp += 1
                        else:
                            tn += 1
                d1 = float(tp + fp)
                d2 = float(tp + fn)
                d3 = float(tn + fp)
                d4 = float(tn + fn)
                if d1 == 0.0 or d2 == 0.0 or d3 == 0.0 or d4 == 0.0:
                    m = 0.0
                else:
                    m = (tp * tn - fp * fn) / np.sqrt(d1 * d2 * d3 * d4)
                if m > best:
                    best = m
                    bi, bj, bk = i, j, k
    return best, bi, bj, bk, N - bi - bj - bk


def monotone_keys_to_float32(u: np.ndarray) -> np.ndarray:
    """Invert the monotone uint32 key mapping used by the rank kernels."""
    u = np.asarray(u, dtype=np.uint32)
    mask = np.where(u >> 31 == 1, np.uint32(0x80000000), np.uint32(0xFFFFFFFF))
    return (u ^ mask).view(np.float32)
