"""Log-barrier Newton kernels for the per-node convex relaxation.

Variable layout, with ``ne = K * L`` and entry ``j = k * L + l``::

    x[0]             eta (the max-min rate)
    x[1 + j]         s_kl (power share, normalized by the pair budget)
    x[1 + ne + j]    rho_kl (relaxed indicator)

``sfree`` / ``rfree`` mark the entries that vary; every other entry of ``x``
holds its fixed value (s = 0; rho = 0 or 1). The rate of pair ``l`` is
``sum_k log2(1 + rho s / (a rho + b s))`` over entries with ``sfree``.

Two implementations of the barrier value and its derivatives are provided:
explicit loops compiled by numba, and vectorized numpy. The Newton driver is
written once and runs either compiled (with the loop kernels) or as plain
Python (with the numpy kernels).
"""
import math
import types

import numpy as np

from ._jit import njit

LN2 = math.log(2.0)

STATUS_OK = 0
STATUS_MAX_ITERS = 1
STATUS_STALLED = 2


def count_constraints(K, L, sfree, rfree):
    sf = np.asarray(sfree).reshape(K, L).astype(bool)
    rf = np.asarray(rfree).reshape(K, L).astype(bool)
    return int(L + rf.any(axis=1).sum() + sf.any(axis=0).sum() + 2 * sf.sum() + 2 * rf.sum())


# --------------------------------------------------------------------------
# numba loop kernels


@njit
def barrier_value_loops(x, t, a, b, cap, K, L, sfree, rfree):
    ne = K * L
    val = -t * x[0]
    for l in range(L):
        rate = 0.0
        col = 0.0
        anys = False
        for k in range(K):
            j = k * L + l
            if sfree[j]:
                anys = True
                s = x[1 + j]
                r = x[1 + ne + j]
                if s <= 0.0:
                    return np.inf
                c = r * cap[j] - s
                if c <= 0.0:
                    return np.inf
                val -= math.log(s) + math.log(c)
                rate += math.log1p(r * s / (a[j] * r + b[j] * s)) / LN2
                col += s
        h = rate - x[0]
        if h <= 0.0:
            return np.inf
        val -= math.log(h)
        if anys:
            sl = 1.0 - col
            if sl <= 0.0:
                return np.inf
            val -= math.log(sl)
    for k in range(K):
        row = 0.0
        anyr = False
        for l in range(L):
            j = k * L + l
            r = x[1 + ne + j]
            if rfree[j]:
                anyr = True
                if r <= 0.0 or r >= 1.0:
                    return np.inf
                val -= math.log(r) + math.log(1.0 - r)
            row += r
        if anyr:
            sl = 1.0 - row
            if sl <= 0.0:
                return np.inf
            val -= math.log(sl)
    return val


@njit
def grad_hess_loops(x, t, a, b, cap, K, L, sfree, rfree, g, H):
    ne = K * L
    n = x.shape[0]
    for i in range(n):
        g[i] = 0.0
        for m in range(n):
            H[i, m] = 0.0
    g[0] = -t
    idx = np.empty(2 * K + 1, dtype=np.int64)
    u = np.empty(2 * K + 1)
    for l in range(L):
        cnt = 1
        idx[0] = 0
        u[0] = -1.0
        rate = 0.0
        # second-order part of the rate: 2x2 blocks per entry
        for k in range(K):
            j = k * L + l
            if not sfree[j]:
                continue
            s = x[1 + j]
            r = x[1 + ne + j]
            aj = a[j]
            bj = b[j]
            D = aj * r + bj * s
            q = r * s / D
            q_s = aj * r * r / (D * D)
            q_r = bj * s * s / (D * D)
            op = 1.0 + q
            rate += math.log1p(q) / LN2
            idx[cnt] = 1 + j
            u[cnt] = q_s / (op * LN2)
            cnt += 1
            if rfree[j]:
                idx[cnt] = 1 + ne + j
                u[cnt] = q_r / (op * LN2)
                cnt += 1
        h = rate - x[0]
        inv = 1.0 / h
        for p in range(cnt):
            g[idx[p]] -= u[p] * inv
            for m in range(cnt):
                H[idx[p], idx[m]] += u[p] * u[m] * inv * inv
        # second-order part of the rate: 2x2 blocks per entry
        for k in range(K):
            j = k * L + l
            if not sfree[j]:
                continue
            s = x[1 + j]
            r = x[1 + ne + j]
            aj = a[j]
            bj = b[j]
            D = aj * r + bj * s
            q = r * s / D
            q_s = aj * r * r / (D * D)
            q_r = bj * s * s / (D * D)
            D3 = D * D * D
            op = 1.0 + q
            den = op * op * LN2
            f_ss = (-2.0 * aj * bj * r * r / D3 * op - q_s * q_s) / den
            si = 1 + j
            H[si, si] -= f_ss * inv
            if rfree[j]:
                ri = 1 + ne + j
                f_rr = (-2.0 * aj * bj * s * s / D3 * op - q_r * q_r) / den
                f_sr = (2.0 * aj * bj * r * s / D3 * op - q_s * q_r) / den
                H[ri, ri] -= f_rr * inv
                H[si, ri] -= f_sr * inv
                H[ri, si] -= f_sr * inv
        # per-pair power budget
        col = 0.0
        anys = False
        for k in range(K):
            j = k * L + l
            if sfree[j]:
                anys = True
                col += x[1 + j]
        if anys:
            w = 1.0 / (1.0 - col)
            for k in range(K):
                j = k * L + l
                if not sfree[j]:
                    continue
                g[1 + j] += w
                for k2 in range(K):
                    j2 = k2 * L + l
                    if sfree[j2]:
                        H[1 + j, 1 + j2] += w * w
    for k in range(K):
        row = 0.0
        anyr = False
        for l in range(L):
            j = k * L + l
            row += x[1 + ne + j]
            if rfree[j]:
                anyr = True
        if anyr:
            w = 1.0 / (1.0 - row)
            for l in range(L):
                j = k * L + l
                if not rfree[j]:
                    continue
                g[1 + ne + j] += w
                for l2 in range(L):
                    j2 = k * L + l2
                    if rfree[j2]:
                        H[1 + ne + j, 1 + ne + j2] += w * w
    for j in range(ne):
        si = 1 + j
        ri = 1 + ne + j
        if sfree[j]:
            s = x[si]
            r = x[ri]
            c = r * cap[j] - s
            ic = 1.0 / c
            g[si] += ic - 1.0 / s
            H[si, si] += ic * ic + 1.0 / (s * s)
            if rfree[j]:
                g[ri] -= cap[j] * ic
                H[ri, ri] += cap[j] * cap[j] * ic * ic
                H[si, ri] -= cap[j] * ic * ic
                H[ri, si] -= cap[j] * ic * ic
        else:
            H[si, si] = 1.0
        if rfree[j]:
            r = x[ri]
            g[ri] += -1.0 / r + 1.0 / (1.0 - r)
            H[ri, ri] += 1.0 / (r * r) + 1.0 / ((1.0 - r) * (1.0 - r))
        else:
            H[ri, ri] = 1.0


# --------------------------------------------------------------------------
# numpy kernels


def barrier_value_numpy(x, t, a, b, cap, K, L, sfree, rfree):
    ne = K * L
    sf = sfree.astype(bool)
    rf = rfree.astype(bool)
    s = x[1 : 1 + ne]
    r = x[1 + ne :]
    ss = s[sf]
    c = r[sf] * cap[sf] - ss
    rr = r[rf]
    if np.any(ss <= 0) or np.any(c <= 0) or np.any(rr <= 0) or np.any(rr >= 1):
        return np.inf
    q = np.zeros(ne)
    q[sf] = r[sf] * ss / (a[sf] * r[sf] + b[sf] * ss)
    h = (np.log1p(q) / LN2).reshape(K, L).sum(axis=0) - x[0]
    col = 1.0 - s.reshape(K, L).sum(axis=0)[sf.reshape(K, L).any(axis=0)]
    row = 1.0 - r.reshape(K, L).sum(axis=1)[rf.reshape(K, L).any(axis=1)]
    if np.any(h <= 0) or np.any(col <= 0) or np.any(row <= 0):
        return np.inf
    return float(
        -t * x[0]
        - np.log(h).sum()
        - np.log(col).sum()
        - np.log(row).sum()
        - np.log(ss).sum()
        - np.log(c).sum()
        - np.log(rr).sum()
        - np.log1p(-rr).sum()
    )


def grad_hess_numpy(x, t, a, b, cap, K, L, sfree, rfree, g, H):
    ne = K * L
    n = x.shape[0]
    sf = sfree.astype(bool)
    rf = rfree.astype(bool)
    sff = sf.astype(float)
    rff = rf.astype(float)
    s = np.where(sf, x[1 : 1 + ne], 1.0)
    r = np.where(sf, x[1 + ne :], 1.0)
    sidx = 1 + np.arange(ne)
    ridx = 1 + ne + np.arange(ne)
    lcol = np.arange(ne) % L

    D = a * r + b * s
    q = r * s / D
    q_s = a * r * r / D**2
    q_r = b * s * s / D**2
    D3 = D**3
    op = 1.0 + q
    den = op * op * LN2
    f_s = q_s / (op * LN2) * sff
    f_r = q_r / (op * LN2) * sff * rff
    f_ss = (-2.0 * a * b * r * r / D3 * op - q_s**2) / den * sff
    f_rr = (-2.0 * a * b * s * s / D3 * op - q_r**2) / den * sff * rff
    f_sr = (2.0 * a * b * r * s / D3 * op - q_s * q_r) / den * sff * rff
    rate = np.bincount(lcol, weights=np.log1p(q) / LN2 * sff, minlength=L)
    inv = 1.0 / (rate - x[0])

    # rate barriers: outer products of each pair's gradient
    U = np.zeros((L, n))
    U[:, 0] = -1.0
    U[lcol, sidx] = f_s
    U[lcol, ridx] = f_r
    Us = U * inv[:, None]
    g[:] = -Us.sum(axis=0)
    g[0] -= t
    H[:, :] = Us.T @ Us
    il = inv[lcol]
    H[sidx, sidx] -= f_ss * il
    H[ridx, ridx] -= f_rr * il
    H[sidx, ridx] -= f_sr * il
    H[ridx, sidx] -= f_sr * il

    # per-pair power budget
    S2 = sf.reshape(K, L)
    colmask = S2.any(axis=0)
    wcol = np.where(colmask, 1.0 / (1.0 - x[1 : 1 + ne].reshape(K, L).sum(axis=0) * colmask), 0.0)
    W = np.zeros((L, n))
    W[lcol, sidx] = sff
    Ws = W * wcol[:, None]
    g += Ws.sum(axis=0)
    H += Ws.T @ Ws

    # per-channel indicator sum
    R2 = rf.reshape(K, L)
    rowmask = R2.any(axis=1)
    rsum = x[1 + ne :].reshape(K, L).sum(axis=1)
    wrow = np.where(rowmask, 1.0 / np.where(rowmask, 1.0 - rsum, 1.0), 0.0)
    V = np.zeros((K, n))
    V[np.arange(ne) // L, ridx] = rff
    Vs = V * wrow[:, None]
    g += Vs.sum(axis=0)
    H += Vs.T @ Vs

    # coupling s <= rho * cap, and simple bounds
    c = np.where(sf, r * cap - s, 1.0)
    ic = 1.0 / c * sff
    g[sidx] += ic - sff / s
    H[sidx, sidx] += ic * ic + sff / (s * s)
    g[ridx] -= cap * ic * rff
    H[ridx, ridx] += (cap * ic) ** 2 * rff
    H[sidx, ridx] -= cap * ic * ic * rff
    H[ridx, sidx] -= cap * ic * ic * rff
    rv = np.where(rf, x[1 + ne :], 0.5)
    g[ridx] += (-1.0 / rv + 1.0 / (1.0 - rv)) * rff
    H[ridx, ridx] += (1.0 / rv**2 + 1.0 / (1.0 - rv) ** 2) * rff
    H[sidx[~sf], sidx[~sf]] = 1.0
    H[ridx[~rf], ridx[~rf]] = 1.0


# --------------------------------------------------------------------------
# driver


def newton_barrier(x, a, b, cap, K, L, sfree, rfree, m, t0, mu, opt_tol, inner_tol, max_newton):
    """Barrier path-following from a strictly feasible ``x`` (modified in place).

    Returns ``(t, iterations, status, decrement, stationarity)`` where
    ``stationarity`` is the sup-norm of the centering gradient divided by ``t``.
    """
    n = x.shape[0]
    g = np.zeros(n)
    H = np.zeros((n, n))
    xn = np.empty(n)
    t = t0
    iters = 0
    lam2 = 0.0
    status = STATUS_OK
    while True:
        while True:
            grad_hess(x, t, a, b, cap, K, L, sfree, rfree, g, H)
            dx = np.linalg.solve(H, -g)
            lam2 = 0.0
            for i in range(n):
                lam2 -= g[i] * dx[i]
            if lam2 * 0.5 <= inner_tol:
                break
            if iters >= max_newton:
                status = STATUS_MAX_ITERS
                break
            iters += 1
            f0 = barrier_value(x, t, a, b, cap, K, L, sfree, rfree)
            step = 1.0
            accepted = False
            while step > 1e-14:
                for i in range(n):
                    xn[i] = x[i] + step * dx[i]
                f1 = barrier_value(xn, t, a, b, cap, K, L, sfree, rfree)
                # slack on the Armijo test absorbs rounding in f once t is large
                if f1 <= f0 - 0.25 * step * lam2 + 1e-13 * abs(f0):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                # no representable decrease left: accept as centered if nearly so
                if lam2 * 0.5 > 1e4 * inner_tol:
                    status = STATUS_STALLED
                break
            for i in range(n):
                x[i] = xn[i]
        if status != STATUS_OK:
            break
        # gap relative to eta once the rate drops below one bit, floored at 1e-12
        scale = min(1.0, max(abs(x[0]), 1e-6))
        if m / t < opt_tol * scale:
            break
        t *= mu
    grad_hess(x, t, a, b, cap, K, L, sfree, rfree, g, H)
    gmax = 0.0
    for i in range(n):
        v = abs(g[i])
        if v > gmax:
            gmax = v
    return t, iters, status, lam2 * 0.5, gmax / t


# The driver resolves ``grad_hess`` / ``barrier_value`` as module globals. The
# compiled variant sees the loop kernels; the numpy variant is the same code
# object rebound to the vectorized kernels. Passing the kernels as arguments
# would defeat numba's on-disk cache.
grad_hess = grad_hess_loops
barrier_value = barrier_value_loops

newton_barrier_numba = njit(newton_barrier)
newton_barrier_numpy = types.FunctionType(
    newton_barrier.__code__,
    {**globals(), "grad_hess": grad_hess_numpy, "barrier_value": barrier_value_numpy},
    "newton_barrier_numpy",
)


def svm_dcd(Z, ys, U, seed, max_epochs, tol):
    """Dual coordinate descent for the box-constrained linear SVM dual.

    ``Z`` already carries the constant bias column. The visiting order is a
    Fisher-Yates shuffle per epoch driven by an integer LCG, so the compiled
    and interpreted paths produce identical iterates.
    """
    n, d = Z.shape
    alpha = np.zeros(n)
    w = np.zeros(d)
    qd = np.zeros(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += Z[i, j] * Z[i, j]
        qd[i] = s
    order = np.arange(n)
    state = seed % 2147483648
    epochs = 0
    for epoch in range(max_epochs):
        epochs = epoch + 1
        for i in range(n - 1, 0, -1):
            state = (1103515245 * state + 12345) % 2147483648
            j = state % (i + 1)
            tmp = order[i]
            order[i] = order[j]
            order[j] = tmp
        pg_max = -np.inf
        pg_min = np.inf
        for idx in range(n):
            i = order[idx]
            g = 0.0
            for j in range(d):
                g += w[j] * Z[i, j]
            g = ys[i] * g - 1.0
            pg = g
            if alpha[i] <= 0.0:
                pg = min(g, 0.0)
            elif alpha[i] >= U[i]:
                pg = max(g, 0.0)
            if pg > pg_max:
                pg_max = pg
            if pg < pg_min:
                pg_min = pg
            if pg != 0.0 and qd[i] > 0.0:
                old = alpha[i]
                new = min(max(old - g / qd[i], 0.0), U[i])
                delta = (new - old) * ys[i]
                alpha[i] = new
                for j in range(d):
                    w[j] += delta * Z[i, j]
        if pg_max - pg_min < tol:
            break
    return w, alpha, epochs


svm_dcd_numba = njit(svm_dcd)
svm_dcd_numpy = svm_dcd
