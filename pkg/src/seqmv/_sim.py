"""Compiled Euler-Maruyama loops.

One-dimensional loops use flat ``(N, M+1)`` path arrays; the ``_nd`` variants
take ``(N, M+1, d)``.  Every random number comes from a counter-based stream
so results do not depend on loop order or thread count.

Mean-field field modes: 0 = none, 1 = trig moments (exact in x),
2 = gridded velocity with linear interpolation.
"""

import math

import numpy as np
from numba import njit, prange

from . import _kernels as K
from .rng import stream_normals, stream_uniforms

TAG_INIT = np.uint64(1)
TAG_BM = np.uint64(2)

FIELD_NONE = 0
FIELD_TRIG = 1
FIELD_GRID = 2


@njit(cache=True)
def init_position(seed, replica, particle, tag, law, lp, dim, out):
    if law == 0:
        stream_normals(seed, np.uint64(replica), np.uint64(particle), tag, 0, out)
        for c in range(dim):
            out[c] = lp[0] + lp[1] * out[c]
    elif law == 1:
        stream_uniforms(seed, np.uint64(replica), np.uint64(particle), tag, 0, out)
        for c in range(dim):
            out[c] = lp[0] + (lp[1] - lp[0]) * out[c]
    else:
        for c in range(dim):
            out[c] = lp[0]


@njit(inline="always")
def drift_b(has_b, k, x, bx, bvals):
    if not has_b:
        return 0.0
    n = bx.shape[0]
    if x <= bx[0]:
        return bvals[k, 0]
    if x >= bx[n - 1]:
        return bvals[k, n - 1]
    j = np.searchsorted(bx, x) - 1
    lam = (x - bx[j]) / (bx[j + 1] - bx[j])
    return (1.0 - lam) * bvals[k, j] + lam * bvals[k, j + 1]


@njit(inline="always")
def field_value(mode, code, a, w, k, x, fc, fs, vel, x0, dx, lo, hi, clamps):
    """v_k(x) = (K * rho_k)(x) from the mean-field solution."""
    if mode == FIELD_TRIG:
        if code == K.COSINE_Y:
            return a * fc[k]
        return a * (math.cos(w * x) * fc[k] + math.sin(w * x) * fs[k])
    if mode == FIELD_GRID:
        n = vel.shape[1]
        if x < lo or x > hi:
            clamps[0] += 1
        s = (x - x0) / dx
        if s <= 0.0:
            return vel[k, 0]
        if s >= n - 1:
            return vel[k, n - 1]
        j = int(s)
        lam = s - j
        return (1.0 - lam) * vel[k, j] + lam * vel[k, j + 1]
    return 0.0


@njit(cache=True)
def weights_row(alpha, i, out):
    """w_{i,k}, k = 1..i (0-based out[0:i]) by the backward recurrence."""
    tail = 1.0
    for k in range(i - 1, -1, -1):
        out[k] = alpha[k] * tail
        tail *= 1.0 - alpha[k]


@njit(cache=True)
def trig_accumulate(alpha, p, w, paths, mc, ms):
    """Fold particle p into the running trig moments of the weighted measure."""
    al = alpha[p]
    M1 = paths.shape[1]
    for k in range(M1):
        x = paths[p, k]
        mc[k] = (1.0 - al) * mc[k] + al * math.cos(w * x)
        ms[k] = (1.0 - al) * ms[k] + al * math.sin(w * x)


@njit(cache=True)
def seq_particle_1d(
    p, replica, seed, tag_init, tag_bm, M, dt, sig, code, a, w, use_trig,
    alpha, paths, mc, ms, wbuf, zbuf, bm_sub, law, lp,
    has_b, bx, bvals,
    fmode, fc, fs, vel, fx0, fdx, flo, fhi, clamps,
    energy_row, counts,
):
    """Simulate particle p (0-based) of the sequential system given paths[:p].

    Returns False if the path became non-finite.
    """
    x0 = np.empty(1)
    init_position(seed, replica, p, tag_init, law, lp, 1, x0)
    paths[p, 0] = x0[0]
    stream_normals(seed, np.uint64(replica), np.uint64(p), tag_bm, 0, zbuf)
    sdt = sig * math.sqrt(dt / bm_sub)
    inv_sig2 = 1.0 / (sig * sig)
    generic = (not use_trig) and code != K.ZERO and p > 0
    if generic:
        weights_row(alpha, p, wbuf)
    e = 0.0
    for k in range(M):
        x = paths[p, k]
        inter = 0.0
        if p > 0 and code != K.ZERO:
            if use_trig:
                if code == K.COSINE_Y:
                    inter = a * mc[k]
                else:
                    inter = a * (math.cos(w * x) * mc[k] + math.sin(w * x) * ms[k])
            else:
                for j in range(p):
                    inter += wbuf[j] * K.k1(code, a, w, x, paths[j, k])
                counts[0] += p
        if fmode != FIELD_NONE:
            dlt = inter - field_value(fmode, code, a, w, k, x, fc, fs, vel, fx0, fdx, flo, fhi, clamps)
            e += 0.5 * dlt * dlt * inv_sig2 * dt
        zs = 0.0
        for s in range(bm_sub):
            zs += zbuf[k * bm_sub + s]
        xn = x + (drift_b(has_b, k, x, bx, bvals) + inter) * dt + sdt * zs
        if not math.isfinite(xn):
            return False
        paths[p, k + 1] = xn
    energy_row[p] = e
    if use_trig:
        trig_accumulate(alpha, p, w, paths, mc, ms)
    return True


@njit(cache=True)
def run_sequential_1d(
    p_start, p_end, replica, seed, tag_init, tag_bm, M, dt, sig, code, a, w, use_trig,
    alpha, paths, mc, ms, bm_sub, law, lp, has_b, bx, bvals,
    fmode, fc, fs, vel, fx0, fdx, flo, fhi, clamps, energy_row, counts,
):
    wbuf = np.empty(max(p_end, 1))
    zbuf = np.empty(M * bm_sub)
    for p in range(p_start, p_end):
        ok = seq_particle_1d(
            p, replica, seed, tag_init, tag_bm, M, dt, sig, code, a, w, use_trig,
            alpha, paths, mc, ms, wbuf, zbuf, bm_sub, law, lp, has_b, bx, bvals,
            fmode, fc, fs, vel, fx0, fdx, flo, fhi, clamps, energy_row, counts,
        )
        if not ok:
            return p
    return -1


@njit(cache=True)
def rebuild_trig(alpha, n, w, paths, mc, ms):
    mc[:] = 0.0
    ms[:] = 0.0
    for p in range(n):
        trig_accumulate(alpha, p, w, paths, mc, ms)


@njit(cache=True)
def run_classical_1d(
    N, replica, seed, tag_init, tag_bm, M, dt, sig, code, a, w, use_trig,
    paths, bm_sub, law, lp, has_b, bx, bvals, counts,
):
    """Fully coupled system; drift uses mu^N including the self term."""
    z = np.empty(M * bm_sub)
    noise = np.empty((N, M))
    x0 = np.empty(1)
    sdt = sig * math.sqrt(dt / bm_sub)
    for p in range(N):
        init_position(seed, replica, p, tag_init, law, lp, 1, x0)
        paths[p, 0] = x0[0]
        stream_normals(seed, np.uint64(replica), np.uint64(p), tag_bm, 0, z)
        for k in range(M):
            zs = 0.0
            for s in range(bm_sub):
                zs += z[k * bm_sub + s]
            noise[p, k] = sdt * zs
    inv_n = 1.0 / N
    for k in range(M):
        C = 0.0
        S = 0.0
        if use_trig and code != K.ZERO:
            for j in range(N):
                C += math.cos(w * paths[j, k])
                S += math.sin(w * paths[j, k])
            C *= inv_n
            S *= inv_n
        for p in range(N):
            x = paths[p, k]
            inter = 0.0
            if code != K.ZERO:
                if use_trig:
                    if code == K.COSINE_Y:
                        inter = a * C
                    else:
                        inter = a * (math.cos(w * x) * C + math.sin(w * x) * S)
                else:
                    for j in range(N):
                        inter += K.k1(code, a, w, x, paths[j, k])
                    inter *= inv_n
                    counts[0] += N
            xn = x + (drift_b(has_b, k, x, bx, bvals) + inter) * dt + noise[p, k]
            if not math.isfinite(xn):
                return p
            paths[p, k + 1] = xn
    return -1


@njit(cache=True)
def run_iid_1d(
    p_start, p_end, replica, seed, tag_init, tag_bm, M, dt, sig, code, a, w,
    paths, bm_sub, law, lp, has_b, bx, bvals,
    fmode, fc, fs, vel, fx0, fdx, flo, fhi, clamps,
):
    """Independent copies driven by the frozen mean-field velocity."""
    z = np.empty(M * bm_sub)
    x0 = np.empty(1)
    sdt = sig * math.sqrt(dt / bm_sub)
    for p in range(p_start, p_end):
        init_position(seed, replica, p, tag_init, law, lp, 1, x0)
        paths[p, 0] = x0[0]
        stream_normals(seed, np.uint64(replica), np.uint64(p), tag_bm, 0, z)
        for k in range(M):
            x = paths[p, k]
            v = field_value(fmode, code, a, w, k, x, fc, fs, vel, fx0, fdx, flo, fhi, clamps)
            zs = 0.0
            for s in range(bm_sub):
                zs += z[k * bm_sub + s]
            xn = x + (drift_b(has_b, k, x, bx, bvals) + v) * dt + sdt * zs
            if not math.isfinite(xn):
                return p
            paths[p, k + 1] = xn
    return -1


# ------------------------------------------------------------------ d >= 1


@njit(cache=True)
def _noise_nd(seed, replica, p, tag_bm, M, d, bm_sub, sigma, dt, z, out):
    """out[k, :] = sigma @ (sum of bm_sub normals) * sqrt(dt / bm_sub)."""
    stream_normals(seed, np.uint64(replica), np.uint64(p), tag_bm, 0, z)
    sq = math.sqrt(dt / bm_sub)
    g = np.zeros(d)
    for k in range(M):
        for c in range(d):
            g[c] = 0.0
        for s in range(bm_sub):
            for c in range(d):
                g[c] += z[(k * bm_sub + s) * d + c]
        for r in range(d):
            acc = 0.0
            for c in range(d):
                acc += sigma[r, c] * g[c]
            out[k, r] = sq * acc


@njit(cache=True)
def run_sequential_nd(
    p_start, p_end, replica, seed, tag_init, tag_bm, M, dt, sigma, code, a, w,
    alpha, paths, bm_sub, law, lp, counts,
):
    d = paths.shape[2]
    z = np.empty(M * bm_sub * d)
    noise = np.empty((M, d))
    wbuf = np.empty(max(p_end, 1))
    x0 = np.empty(d)
    inter = np.empty(d)
    for p in range(p_start, p_end):
        init_position(seed, replica, p, tag_init, law, lp, d, x0)
        for c in range(d):
            paths[p, 0, c] = x0[c]
        _noise_nd(seed, replica, p, tag_bm, M, d, bm_sub, sigma, dt, z, noise)
        if p > 0:
            weights_row(alpha, p, wbuf)
        for k in range(M):
            for c in range(d):
                inter[c] = 0.0
            if p > 0 and code != K.ZERO:
                for j in range(p):
                    K.kvec_add(code, a, w, paths[p, k], paths[j, k], wbuf[j], inter)
                counts[0] += p
            for c in range(d):
                xn = paths[p, k, c] + inter[c] * dt + noise[k, c]
                if not math.isfinite(xn):
                    return p
                paths[p, k + 1, c] = xn
    return -1


@njit(cache=True)
def run_classical_nd(N, replica, seed, tag_init, tag_bm, M, dt, sigma, code, a, w,
                     paths, bm_sub, law, lp, counts):
    d = paths.shape[2]
    z = np.empty(M * bm_sub * d)
    noise = np.empty((N, M, d))
    x0 = np.empty(d)
    inter = np.empty(d)
    for p in range(N):
        init_position(seed, replica, p, tag_init, law, lp, d, x0)
        for c in range(d):
            paths[p, 0, c] = x0[c]
        _noise_nd(seed, replica, p, tag_bm, M, d, bm_sub, sigma, dt, z, noise[p])
    inv_n = 1.0 / N
    for k in range(M):
        for p in range(N):
            for c in range(d):
                inter[c] = 0.0
            if code != K.ZERO:
                for j in range(N):
                    K.kvec_add(code, a, w, paths[p, k], paths[j, k], inv_n, inter)
                counts[0] += N
            for c in range(d):
                xn = paths[p, k, c] + inter[c] * dt + noise[p, k, c]
                if not math.isfinite(xn):
                    return p
                paths[p, k + 1, c] = xn
    return -1


# ------------------------------------------------------- Monte Carlo drivers


@njit(cache=True, parallel=True)
def mc_sequential_energy(
    n_rep, rep0, N, seed, M, dt, sig, code, a, w, use_trig, alpha, bm_sub, law, lp,
    has_b, bx, bvals, fmode, fc, fs, vel, fx0, fdx, flo, fhi, energy, status, clamps,
):
    """energy[r, p] = 1/2 sum_k |Delta^p_k / sigma|^2 dt for replica rep0 + r."""
    for r in prange(n_rep):
        paths = np.empty((N, M + 1))
        mc = np.zeros(M + 1)
        ms = np.zeros(M + 1)
        cnt = np.zeros(1, dtype=np.int64)
        cl = np.zeros(1, dtype=np.int64)
        status[r] = run_sequential_1d(
            0, N, rep0 + r, seed, TAG_INIT, TAG_BM, M, dt, sig, code, a, w, use_trig,
            alpha, paths, mc, ms, bm_sub, law, lp, has_b, bx, bvals,
            fmode, fc, fs, vel, fx0, fdx, flo, fhi, cl, energy[r], cnt,
        )
        clamps[r] = cl[0]


@njit(cache=True)
def _prefix_trig_projection(paths, cols, n_list, out):
    """Sums of cos and sin of paths[:n, col] for every prefix n in n_list and col in cols."""
    n_max = n_list[n_list.shape[0] - 1]
    for c in range(cols.shape[0]):
        col = cols[c]
        sc = 0.0
        ss = 0.0
        q = 0
        for p in range(n_max):
            x = paths[p, col]
            sc += math.cos(x)
            ss += math.sin(x)
            while q < n_list.shape[0] and n_list[q] == p + 1:
                out[q, c, 0] = sc
                out[q, c, 1] = ss
                q += 1


@njit(cache=True, parallel=True)
def mc_trig_projections(
    system, n_rep, rep0, n_list, seed, M, dt, sig, code, a, w, use_trig, alpha, bm_sub,
    law, lp, has_b, bx, bvals, fmode, fc, fs, vel, fx0, fdx, flo, fhi, cols, out, status, clamps,
):
    """Per replica, sums of cos(X_t) and sin(X_t) at the time indices ``cols``;
    ``out`` has shape (n_rep, len(n_list), len(cols), 2).

    system: 0 sequential (prefixes of one run), 1 classical (one run per N),
    2 i.i.d. limit copies (prefixes).
    """
    n_max = n_list[n_list.shape[0] - 1]
    for r in prange(n_rep):
        cl = np.zeros(1, dtype=np.int64)
        cnt = np.zeros(1, dtype=np.int64)
        rep = rep0 + r
        if system == 0:
            paths = np.empty((n_max, M + 1))
            mc = np.zeros(M + 1)
            ms = np.zeros(M + 1)
            erow = np.zeros(n_max)
            status[r] = run_sequential_1d(
                0, n_max, rep, seed, TAG_INIT, TAG_BM, M, dt, sig, code, a, w, use_trig,
                alpha, paths, mc, ms, bm_sub, law, lp, has_b, bx, bvals,
                0, fc, fs, vel, fx0, fdx, flo, fhi, cl, erow, cnt,
            )
            _prefix_trig_projection(paths, cols, n_list, out[r])
        elif system == 1:
            st = -1
            for q in range(n_list.shape[0]):
                n = n_list[q]
                paths = np.empty((n, M + 1))
                s = run_classical_1d(
                    n, rep, seed, TAG_INIT, TAG_BM, M, dt, sig, code, a, w, use_trig,
                    paths, bm_sub, law, lp, has_b, bx, bvals, cnt,
                )
                if s >= 0:
                    st = s
                for c in range(cols.shape[0]):
                    sc = 0.0
                    ss = 0.0
                    for p in range(n):
                        sc += math.cos(paths[p, cols[c]])
                        ss += math.sin(paths[p, cols[c]])
                    out[r, q, c, 0] = sc
                    out[r, q, c, 1] = ss
            status[r] = st
        else:
            paths = np.empty((n_max, M + 1))
            status[r] = run_iid_1d(
                0, n_max, rep, seed, TAG_INIT, TAG_BM, M, dt, sig, code, a, w,
                paths, bm_sub, law, lp, has_b, bx, bvals,
                fmode, fc, fs, vel, fx0, fdx, flo, fhi, cl,
            )
            _prefix_trig_projection(paths, cols, n_list, out[r])
        clamps[r] = cl[0]


@njit(cache=True, parallel=True)
def mc_iid_benchmark(
    n_rep, rep0, L, i_list, seed, tags, M, dt, sig, code, a, w, bm_sub, law, lp,
    has_b, bx, bvals, fmode, fc, fs, vel, fx0, fdx, flo, fhi, r_out, v_out, status, clamps,
):
    """Sampling-barrier benchmark on i.i.d. limit copies.

    Copies 0..L-2 (tags[0], tags[1]) are the predecessors, copy L-1 is the
    evaluation copy.  A separate pair on tags[2..5] estimates the variance
    integral V = 1/2 int E|K(X, X') - v(X)|^2 / sigma^2 dt.
    """
    inv_sig2 = 1.0 / (sig * sig)
    for r in prange(n_rep):
        rep = rep0 + r
        cl = np.zeros(1, dtype=np.int64)
        paths = np.empty((L, M + 1))
        st = run_iid_1d(0, L, rep, seed, tags[0], tags[1], M, dt, sig, code, a, w, paths,
                        bm_sub, law, lp, has_b, bx, bvals, fmode, fc, fs, vel, fx0, fdx, flo, fhi, cl)
        ev = L - 1
        for q in range(i_list.shape[0]):
            n_pred = i_list[q] - 1
            e = 0.0
            for k in range(M):
                x = paths[ev, k]
                acc = 0.0
                for j in range(n_pred):
                    acc += K.k1(code, a, w, x, paths[j, k])
                dlt = acc / n_pred - field_value(fmode, code, a, w, k, x, fc, fs, vel, fx0, fdx, flo, fhi, cl)
                e += 0.5 * dlt * dlt * inv_sig2 * dt
            r_out[r, q] = e
        pair_a = np.empty((1, M + 1))
        pair_b = np.empty((1, M + 1))
        s1 = run_iid_1d(0, 1, rep, seed, tags[2], tags[3], M, dt, sig, code, a, w, pair_a,
                        bm_sub, law, lp, has_b, bx, bvals, fmode, fc, fs, vel, fx0, fdx, flo, fhi, cl)
        s2 = run_iid_1d(0, 1, rep, seed, tags[4], tags[5], M, dt, sig, code, a, w, pair_b,
                        bm_sub, law, lp, has_b, bx, bvals, fmode, fc, fs, vel, fx0, fdx, flo, fhi, cl)
        e = 0.0
        for k in range(M):
            x = pair_a[0, k]
            dlt = K.k1(code, a, w, x, pair_b[0, k]) - field_value(
                fmode, code, a, w, k, x, fc, fs, vel, fx0, fdx, flo, fhi, cl)
            e += 0.5 * dlt * dlt * inv_sig2 * dt
        v_out[r] = e
        status[r] = max(st, max(s1, s2))
        clamps[r] = cl[0]
