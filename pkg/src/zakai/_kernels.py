"""Compiled inner loops for the 1D solvers.

Linear systems are cyclic-banded: row ``i`` couples only to columns
``i - p .. i + p`` taken mod ``n``.  They are solved by splitting off the
last ``p`` unknowns: the leading block is an ordinary band matrix (LU with
partial pivoting in compact row storage) and the ``p x p`` Schur complement
is factored densely.  Small or wide systems fall back to a dense LU.
Per-path arithmetic never depends on other paths, so results are bitwise
independent of how paths are batched.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = [
    "CyclicBand",
    "dense_factor",
    "dense_solve",
    "transform_path",
    "shared_theta_batch",
    "direct_batch",
]

MAX_HALF_BAND = 12


# -- dense fallback --------------------------------------------------------


@njit(cache=True)
def dense_factor(K, piv):
    """In-place LU with partial pivoting; returns -1 or the failing pivot index."""
    n = K.shape[0]
    for k in range(n):
        best = k
        amax = abs(K[k, k])
        for r in range(k + 1, n):
            if abs(K[r, k]) > amax:
                amax = abs(K[r, k])
                best = r
        piv[k] = best
        if amax == 0.0 or not np.isfinite(amax):
            return k
        if best != k:
            for c in range(n):
                tmp = K[k, c]
                K[k, c] = K[best, c]
                K[best, c] = tmp
        inv = 1.0 / K[k, k]
        for r in range(k + 1, n):
            f = K[r, k] * inv
            K[r, k] = f
            if f != 0.0:
                for c in range(k + 1, n):
                    K[r, c] -= f * K[k, c]
    return -1


@njit(cache=True)
def dense_solve(K, piv, b):
    n = K.shape[0]
    for k in range(n):
        r = piv[k]
        if r != k:
            tmp = b[k]
            b[k] = b[r]
            b[r] = tmp
    for k in range(n):
        bk = b[k]
        for r in range(k + 1, n):
            b[r] -= K[r, k] * bk
    for k in range(n - 1, -1, -1):
        acc = b[k]
        for c in range(k + 1, n):
            acc -= K[k, c] * b[c]
        b[k] = acc / K[k, k]


# -- cyclic band storage ---------------------------------------------------
#
# ``ab[i, c - i + p]`` holds K[i, c] for the leading na = n - p rows and
# columns (width 3p + 1 leaves room for pivoting fill); ``bm``, ``cm`` and
# ``dm`` hold the couplings to and within the trailing p unknowns.


@njit(cache=True)
def use_dense(n, p):
    return p > MAX_HALF_BAND or n <= 4 * p + 2


@njit(cache=True)
def cb_clear(ab, bm, cm, dm, dense, n, p):
    if use_dense(n, p):
        dense[:n, :n] = 0.0
        return
    na = n - p
    for i in range(na):
        for c in range(3 * p + 1):
            ab[i, c] = 0.0
        for c in range(p):
            bm[i, c] = 0.0
    for i in range(p):
        for c in range(na):
            cm[i, c] = 0.0
        for c in range(p):
            dm[i, c] = 0.0


@njit(cache=True)
def cb_add(ab, bm, cm, dm, dense, n, p, i, c, val):
    """``K[i, c] += val`` with ``c`` already reduced mod ``n``."""
    if use_dense(n, p):
        dense[i, c] += val
        return
    na = n - p
    if i < na:
        if c < na:
            ab[i, c - i + p] += val
        else:
            bm[i, c - na] += val
    elif c < na:
        cm[i - na, c] += val
    else:
        dm[i - na, c - na] += val


@njit(cache=True)
def _band_solve(ab, piv, p, na, b):
    for k in range(na):
        r = piv[k]
        if r != k:
            tmp = b[k]
            b[k] = b[r]
            b[r] = tmp
        bk = b[k]
        if bk != 0.0:
            for rr in range(k + 1, min(k + p, na - 1) + 1):
                b[rr] -= ab[rr, k - rr + p] * bk
    for k in range(na - 1, -1, -1):
        acc = b[k]
        for jj in range(p + 1, p + min(2 * p, na - 1 - k) + 1):
            acc -= ab[k, jj] * b[k + jj - p]
        b[k] = acc / ab[k, p]


@njit(cache=True)
def cb_factor(ab, bm, cm, dm, dense, y, piv, pivs, n, p):
    """Factor the assembled system; returns -1 or the failing pivot index."""
    if use_dense(n, p):
        return dense_factor(dense[:n, :n], piv)
    na = n - p
    for k in range(na):
        rmax = min(k + p, na - 1)
        best = k
        amax = abs(ab[k, p])
        for r in range(k + 1, rmax + 1):
            v = abs(ab[r, k - r + p])
            if v > amax:
                amax = v
                best = r
        piv[k] = best
        if amax == 0.0 or not np.isfinite(amax):
            return k
        ncol = min(2 * p, na - 1 - k)
        if best != k:
            d = k - best
            for jj in range(p, p + ncol + 1):
                tmp = ab[k, jj]
                ab[k, jj] = ab[best, jj + d]
                ab[best, jj + d] = tmp
        inv = 1.0 / ab[k, p]
        for r in range(k + 1, rmax + 1):
            d = k - r
            f = ab[r, p + d] * inv
            ab[r, p + d] = f
            if f != 0.0:
                for jj in range(p + 1, p + ncol + 1):
                    ab[r, jj + d] -= f * ab[k, jj]
    # Y = A^{-1} B (all columns at once), then the Schur complement D - C Y
    for i in range(na):
        for j in range(p):
            y[i, j] = bm[i, j]
    for k in range(na):
        r = piv[k]
        if r != k:
            for j in range(p):
                tmp = y[k, j]
                y[k, j] = y[r, j]
                y[r, j] = tmp
        for rr in range(k + 1, min(k + p, na - 1) + 1):
            f = ab[rr, k - rr + p]
            for j in range(p):
                y[rr, j] -= f * y[k, j]
    for k in range(na - 1, -1, -1):
        for jj in range(p + 1, p + min(2 * p, na - 1 - k) + 1):
            f = ab[k, jj]
            c = k + jj - p
            for j in range(p):
                y[k, j] -= f * y[c, j]
        inv = 1.0 / ab[k, p]
        for j in range(p):
            y[k, j] *= inv
    for i in range(p):
        for j in range(p):
            acc = dm[i, j]
            for c in range(na):
                acc -= cm[i, c] * y[c, j]
            dm[i, j] = acc
    f = dense_factor(dm[:p, :p], pivs)
    return -1 if f < 0 else na + f


@njit(cache=True)
def cb_solve(ab, bm, cm, dm, dense, y, piv, pivs, n, p, b):
    """Solve in place with the factors from :func:`cb_factor`."""
    if use_dense(n, p):
        dense_solve(dense[:n, :n], piv, b)
        return
    na = n - p
    z = b[:na]
    _band_solve(ab, piv, p, na, z)
    t = b[na:]
    for i in range(p):
        acc = t[i]
        for c in range(na):
            acc -= cm[i, c] * z[c]
        t[i] = acc
    dense_solve(dm[:p, :p], pivs, t)
    for i in range(na):
        acc = z[i]
        for j in range(p):
            acc -= y[i, j] * t[j]
        z[i] = acc


@njit(cache=True)
def _workspace(n, p):
    q = max(p, 1)
    ab = np.empty((n, 3 * q + 1))
    bm = np.empty((n, q))
    cm = np.empty((q, n))
    dm = np.empty((q, q))
    dense = np.empty((n, n)) if n <= 4 * q + 2 or q > MAX_HALF_BAND else np.empty((1, 1))
    y = np.empty((n, q))
    piv = np.empty(n, dtype=np.int64)
    pivs = np.empty(q, dtype=np.int64)
    return ab, bm, cm, dm, dense, y, piv, pivs


class CyclicBand:
    """One cyclic-banded system ``K`` with half bandwidth ``p``, driven from Python."""

    def __init__(self, mat: np.ndarray, p: int):
        n = mat.shape[0]
        self.n, self.p = n, p
        self.ab, self.bm, self.cm, self.dm, _, self.y, self.piv, self.pivs = _workspace(n, p)
        self.dense = np.empty((n, n))
        cb_clear(self.ab, self.bm, self.cm, self.dm, self.dense, n, p)
        for i, c in zip(*np.nonzero(mat)):
            cb_add(self.ab, self.bm, self.cm, self.dm, self.dense, n, p, int(i), int(c), float(mat[i, c]))
        self.status = cb_factor(self.ab, self.bm, self.cm, self.dm, self.dense, self.y, self.piv, self.pivs, n, p)

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = np.array(b, dtype=float)
        cb_solve(self.ab, self.bm, self.cm, self.dm, self.dense, self.y, self.piv, self.pivs, self.n, self.p, x)
        return x


@njit(cache=True)
def _load_offsets(ab, bm, cm, dm, band, n, p):
    """Compact storage of ``I + K`` from ``band[j, o + P] = K[j, j + o]``."""
    P = (band.shape[1] - 1) // 2
    na = n - p
    cb_clear(ab, bm, cm, dm, ab, n, p)
    for j in range(n):
        for o in range(-p, p + 1):
            val = band[j, o + P]
            if o == 0:
                val += 1.0
            c = j + o
            if c < 0:
                c += n
            elif c >= n:
                c -= n
            if j < na:
                if c < na:
                    ab[j, c - j + p] += val
                else:
                    bm[j, c - na] += val
            elif c < na:
                cm[j - na, c] += val
            else:
                dm[j - na, c - na] += val


# -- operator pieces -------------------------------------------------------


@njit(cache=True)
def _tridiag_apply(lo, di, up, y, out):
    n = y.shape[0]
    if n == 1:
        out[0] = (lo[0] + di[0] + up[0]) * y[0]
        return
    out[0] = lo[0] * y[n - 1] + di[0] * y[0] + up[0] * y[1]
    for i in range(1, n - 1):
        out[i] = lo[i] * y[i - 1] + di[i] * y[i] + up[i] * y[i + 1]
    out[n - 1] = lo[n - 1] * y[n - 2] + di[n - 1] * y[n - 1] + up[n - 1] * y[0]


@njit(cache=True)
def _tridiag_load(ab, bm, cm, dm, dense, lo, di, up, scale):
    """Assemble ``I - scale * T`` for the periodic tridiagonal ``T``."""
    n = lo.shape[0]
    if use_dense(n, 1):
        dense[:n, :n] = 0.0
        for i in range(n):
            dense[i, i] += 1.0 - scale * di[i]
            dense[i, (i - 1) % n] -= scale * lo[i]
            dense[i, (i + 1) % n] -= scale * up[i]
        return
    na = n - 1
    cb_clear(ab, bm, cm, dm, dense, n, 1)
    for i in range(n):
        for o in range(-1, 2):
            if o == -1:
                val = -scale * lo[i]
                c = i - 1 if i > 0 else n - 1
            elif o == 0:
                val = 1.0 - scale * di[i]
                c = i
            else:
                val = -scale * up[i]
                c = i + 1 if i < n - 1 else 0
            if i < na:
                if c < na:
                    ab[i, c - i + 1] += val
                else:
                    bm[i, 0] += val
            elif c < na:
                cm[0, c] += val
            else:
                dm[0, 0] += val


@njit(cache=True)
def _group_apply(rel, w, e, v, out):
    """``out_l = e_l sum_c w[l, c] v[l + rel_l + c]`` (periodic gather).

    ``rel``/``w`` may hold a single row shared by every node.
    """
    n = v.shape[0]
    K = w.shape[1]
    shared = rel.shape[0] == 1
    for l in range(n):
        ls = 0 if shared else l
        acc = 0.0
        base = (l + rel[ls]) % n
        for c in range(K):
            idx = base + c
            if idx >= n:
                idx -= n
            acc += w[ls, c] * v[idx]
        out[l] = e[l] * acc


@njit(cache=True)
def _conjugated_entries(band, lo, di, up, relp, wp, ep, relm, wm, em, scale):
    """Entries of ``-scale * G(-W) C G(W)`` by row and periodic offset.

    ``band[j, o + P]`` receives the entry at column ``j + o``.  Returns the
    half bandwidth, or -1 when some offset exceeds ``P``.
    """
    n = band.shape[0]
    nk = wp.shape[1]
    sp_ = relp.shape[0] == 1
    sm_ = relm.shape[0] == 1
    P = (band.shape[1] - 1) // 2
    band[:, :] = 0.0
    half = n // 2
    p = 0
    for j in range(n):
        js = 0 if sm_ else j
        fj = -scale * em[j]
        for a in range(nk):
            da = relm[js] + a
            i = j + da
            while i < 0:
                i += n
            while i >= n:
                i -= n
            fa = fj * wm[js, a]
            for db in range(-1, 2):
                if db == -1:
                    cb = lo[i]
                    l = i - 1 if i > 0 else n - 1
                elif db == 0:
                    cb = di[i]
                    l = i
                else:
                    cb = up[i]
                    l = i + 1 if i < n - 1 else 0
                ls = 0 if sp_ else l
                fb = fa * cb * ep[l]
                off0 = da + db + relp[ls]
                for c in range(nk):
                    off = off0 + c
                    while off > half:
                        off -= n
                    while off <= half - n:
                        off += n
                    if off > P or off < -P:
                        return -1
                    band[j, off + P] += fb * wp[ls, c]
                    if off > p:
                        p = off
                    elif -off > p:
                        p = -off
    return p


@njit(cache=True)
def _conjugated_dense(dense, lo, di, up, relp, wp, ep, relm, wm, em, scale):
    """Full-storage assembly of ``I - scale * G(-W) C G(W)``."""
    n = lo.shape[0]
    nk = wp.shape[1]
    sp_ = relp.shape[0] == 1
    sm_ = relm.shape[0] == 1
    dense[:, :] = 0.0
    for j in range(n):
        dense[j, j] += 1.0
        js = 0 if sm_ else j
        for a in range(nk):
            i = (j + relm[js] + a) % n
            fa = -scale * em[j] * wm[js, a]
            for db in range(-1, 2):
                l = (i + db) % n
                cb = lo[i] if db == -1 else (di[i] if db == 0 else up[i])
                ls = 0 if sp_ else l
                fb = fa * cb * ep[l]
                for c in range(nk):
                    dense[j, (l + relp[ls] + c) % n] += fb * wp[ls, c]


# -- path solvers ----------------------------------------------------------


@njit(cache=True)
def transform_path(lo, di, up, relp, wp, ep, relm, wm, em, v0, theta, dt, stride, frames, resid, tol):
    """theta-scheme for ``V' = G(-W) C(t) G(W) V`` along one path.

    ``lo/di/up``: ``(N+1, n)`` tridiagonal stencils of ``C(t_k)``;
    ``rel*/w*/e*``: per-step interpolation stencils and exponential weights
    of ``G(+W_k)`` and ``G(-W_k)``.  Frames every ``stride`` steps (and the
    last step) go to ``frames``.  Returns ``(fail_step, code)`` with code 0
    (ok), 1 (non-finite state) or 2 (linear solve failed).
    """
    nsteps = lo.shape[0] - 1
    n = v0.shape[0]
    P = MAX_HALF_BAND
    band = np.empty((n, 2 * P + 1))
    ab, bm, cm, dm, _, y, piv, pivs = _workspace(n, P)
    dense = np.empty((0, 0))
    v = v0.copy()
    g = np.empty(n)
    z = np.empty(n)
    r = np.empty(n)
    rhs = np.empty(n)
    frames[0, :] = v
    fi = 1
    for k in range(nsteps):
        _group_apply(relp[k], wp[k], ep[k], v, g)
        _tridiag_apply(lo[k], di[k], up[k], g, z)
        _group_apply(relm[k], wm[k], em[k], z, r)
        for i in range(n):
            rhs[i] = v[i] + (1.0 - theta) * dt * r[i]
        q = k + 1
        scale = theta * dt
        p = _conjugated_entries(band, lo[q], di[q], up[q], relp[q], wp[q], ep[q], relm[q], wm[q], em[q], scale)
        if p < 0 or use_dense(n, p):
            p = n
            if dense.shape[0] != n:
                dense = np.empty((n, n))
            _conjugated_dense(dense, lo[q], di[q], up[q], relp[q], wp[q], ep[q], relm[q], wm[q], em[q], scale)
        else:
            _load_offsets(ab, bm, cm, dm, band, n, p)
        if cb_factor(ab, bm, cm, dm, dense, y, piv, pivs, n, p) >= 0:
            return q, 2
        for i in range(n):
            v[i] = rhs[i]
        cb_solve(ab, bm, cm, dm, dense, y, piv, pivs, n, p, v)
        # matrix-free residual of the solve
        _group_apply(relp[q], wp[q], ep[q], v, g)
        _tridiag_apply(lo[q], di[q], up[q], g, z)
        _group_apply(relm[q], wm[q], em[q], z, r)
        num = 0.0
        den = 0.0
        ok = True
        for i in range(n):
            if not np.isfinite(v[i]):
                ok = False
            d = abs(v[i] - scale * r[i] - rhs[i])
            if d > num:
                num = d
            if abs(rhs[i]) > den:
                den = abs(rhs[i])
        if not ok:
            return q, 1
        resid[k] = num / den if den > 0 else num
        if not resid[k] <= tol:
            return q, 2
        if q % stride == 0 or q == nsteps:
            frames[fi, :] = v
            fi += 1
    return -1, 0


@njit(cache=True)
def shared_theta_batch(lo, di, up, mult, dwn, v0, theta, dt, stride, frames, fail):
    """theta-scheme in ``U`` form for multiplicative noise, all paths at once.

    ``U_{k+1} = (I - theta dt C_{k+1})^{-1} exp(sum_n dW_{k,n} b_n) (I + (1 - theta) dt C_k) U_k``;
    one factorization per step serves every path.  ``mult``: ``(N_w, n)``;
    ``dwn``: ``(M, N, N_w)``; ``v0``: ``(M, n)``.
    """
    nsteps = lo.shape[0] - 1
    m, n = v0.shape
    nw = mult.shape[0]
    ab, bm, cm, dm, dense, y, piv, pivs = _workspace(n, 1)
    p = n if use_dense(n, 1) else 1
    u = v0.copy()
    z = np.empty(n)
    for j in range(m):
        frames[j, 0, :] = u[j]
    fi = 1
    for k in range(nsteps):
        q = k + 1
        _tridiag_load(ab, bm, cm, dm, dense, lo[q], di[q], up[q], theta * dt)
        sing = cb_factor(ab, bm, cm, dm, dense, y, piv, pivs, n, p) >= 0
        for j in range(m):
            if fail[j] >= 0:
                continue
            if sing:
                fail[j] = q
                continue
            _tridiag_apply(lo[k], di[k], up[k], u[j], z)
            for i in range(n):
                g = 0.0
                for s in range(nw):
                    g += dwn[j, k, s] * mult[s, i]
                u[j, i] = np.exp(g) * (u[j, i] + (1.0 - theta) * dt * z[i])
            cb_solve(ab, bm, cm, dm, dense, y, piv, pivs, n, p, u[j])
            for i in range(n):
                if not np.isfinite(u[j, i]):
                    fail[j] = q
                    break
        if q % stride == 0 or q == nsteps:
            for j in range(m):
                frames[j, fi, :] = u[j]
            fi += 1


@njit(cache=True)
def direct_batch(lo, di, up, blo, bdi, bup, sqlo, sqdi, squp, dwn, u0, dt, milstein, stride, frames, fail):
    """Semi-implicit Euler-Maruyama / Milstein for ``dU = A U dt + sum B_n U dW_n``.

    ``lo/di/up``: ``(N+1, n)`` stencils of ``A(t_k)``; ``b*``: ``(N_w, n)``
    stencils of the discrete ``B_n``; ``sq*``: ``(N_w, n)`` stencils of the
    analytic ``B_n^2``.  Cross terms ``B_n B_m dW_n dW_m`` (commuting noise)
    are applied by composing the discrete ``B`` stencils.
    """
    nsteps = lo.shape[0] - 1
    m, n = u0.shape
    nw = blo.shape[0]
    ab, bm, cm, dm, dense, y, piv, pivs = _workspace(n, 1)
    p = n if use_dense(n, 1) else 1
    u = u0.copy()
    rhs = np.empty(n)
    z = np.empty(n)
    bz = np.empty((nw, n))
    for j in range(m):
        frames[j, 0, :] = u[j]
    fi = 1
    for k in range(nsteps):
        q = k + 1
        _tridiag_load(ab, bm, cm, dm, dense, lo[q], di[q], up[q], dt)
        sing = cb_factor(ab, bm, cm, dm, dense, y, piv, pivs, n, p) >= 0
        for j in range(m):
            if fail[j] >= 0:
                continue
            if sing:
                fail[j] = q
                continue
            for i in range(n):
                rhs[i] = u[j, i]
            for s in range(nw):
                _tridiag_apply(blo[s], bdi[s], bup[s], u[j], bz[s])
                dw = dwn[j, k, s]
                for i in range(n):
                    rhs[i] += dw * bz[s, i]
            if milstein:
                for s in range(nw):
                    dw = dwn[j, k, s]
                    _tridiag_apply(sqlo[s], sqdi[s], squp[s], u[j], z)
                    c = 0.5 * (dw * dw - dt)
                    for i in range(n):
                        rhs[i] += c * z[i]
                    for s2 in range(s + 1, nw):
                        # 1/2 (B_s B_s2 + B_s2 B_s) dW_s dW_s2
                        c2 = 0.5 * dw * dwn[j, k, s2]
                        _tridiag_apply(blo[s], bdi[s], bup[s], bz[s2], z)
                        for i in range(n):
                            rhs[i] += c2 * z[i]
                        _tridiag_apply(blo[s2], bdi[s2], bup[s2], bz[s], z)
                        for i in range(n):
                            rhs[i] += c2 * z[i]
            cb_solve(ab, bm, cm, dm, dense, y, piv, pivs, n, p, rhs)
            for i in range(n):
                u[j, i] = rhs[i]
                if not np.isfinite(rhs[i]):
                    fail[j] = q
        if q % stride == 0 or q == nsteps:
            for j in range(m):
                frames[j, fi, :] = u[j]
            fi += 1
