"""Compiled RK4 kernels over flattened polynomial term tables."""
import numpy as np
from numba import njit

OK, BLOWUP, NONFINITE = 0, 1, 2


@njit(cache=True, inline="always")
def _powers(x, pw):
    for k in range(x.shape[0]):
        pw[k, 0] = 1.0
        for e in range(1, pw.shape[1]):
            pw[k, e] = pw[k, e - 1] * x[k]


@njit(cache=True)
def power_table(exps, n):
    """Work buffer for monomial evaluation: (n, max degree + 1)."""
    maxdeg = 0
    for t in range(exps.shape[0]):
        for k in range(n):
            maxdeg = max(maxdeg, exps[t, k])
    return np.empty((n, maxdeg + 1))


@njit(cache=True, inline="always")
def eval_fields(x, fidx, cidx, coef, exps, m, X, pw):
    n = x.shape[0]
    X[:, :] = 0.0
    _powers(x, pw)
    for t in range(coef.shape[0]):
        v = coef[t]
        for k in range(n):
            v *= pw[k, exps[t, k]]
        X[fidx[t], cidx[t]] += v


@njit(cache=True, inline="always")
def eval_fields_jac(x, fidx, cidx, coef, exps, m, X, J, pw):
    n = x.shape[0]
    X[:, :] = 0.0
    J[:, :, :] = 0.0
    _powers(x, pw)
    for t in range(coef.shape[0]):
        v = coef[t]
        for k in range(n):
            v *= pw[k, exps[t, k]]
        X[fidx[t], cidx[t]] += v
        for b in range(n):
            e = exps[t, b]
            if e == 0:
                continue
            d = coef[t] * e
            for k in range(n):
                if k == b:
                    d *= pw[k, e - 1]
                else:
                    d *= pw[k, exps[t, k]]
            J[fidx[t], cidx[t], b] += d


@njit(cache=True, inline="always")
def _bundle_rhs(x, S, Si, u, fidx, cidx, coef, exps, m, X, J, dx, dS, dSi, A, pw):
    n = x.shape[0]
    eval_fields_jac(x, fidx, cidx, coef, exps, m, X, J, pw)
    for a in range(n):
        acc = 0.0
        for i in range(m):
            acc += u[i] * X[i, a]
        dx[a] = acc
        for b in range(n):
            acc = 0.0
            for i in range(m):
                acc += u[i] * J[i, a, b]
            A[a, b] = acc
    for a in range(n):
        for b in range(n):
            s1 = 0.0
            s2 = 0.0
            for c in range(n):
                s1 += A[a, c] * S[c, b]
                s2 += Si[a, c] * A[c, b]
            dS[a, b] = s1
            dSi[a, b] = -s2


@njit(cache=True, inline="always")
def _axpy3(out_x, out_S, out_T, x, S, T, c, kx, kS, kT):
    n = x.shape[0]
    for a in range(n):
        out_x[a] = x[a] + c * kx[a]
        for b in range(n):
            out_S[a, b] = S[a, b] + c * kS[a, b]
            out_T[a, b] = T[a, b] + c * kT[a, b]


@njit(cache=True)
def rk4_bundle(x0, U, sub, fidx, cidx, coef, exps, m, bound):
    """Integrate (gamma, S, S^-1) under a piecewise-constant control.

    Returns (status, gamma, S, Sinv) on the refined grid of N*sub+1 nodes.
    """
    n = x0.shape[0]
    N = U.shape[0]
    K = N * sub
    h = 1.0 / K
    G = np.zeros((K + 1, n))
    S = np.zeros((K + 1, n, n))
    Si = np.zeros((K + 1, n, n))
    G[0] = x0
    for a in range(n):
        S[0, a, a] = 1.0
        Si[0, a, a] = 1.0
    X = np.zeros((m, n))
    pw = power_table(exps, n)
    J = np.zeros((m, n, n))
    A = np.zeros((n, n))
    kx = np.zeros((4, n))
    kS = np.zeros((4, n, n))
    kT = np.zeros((4, n, n))
    tx = np.zeros(n); tS = np.zeros((n, n)); tT = np.zeros((n, n))
    for k in range(K):
        u = U[k // sub]
        x = G[k]; Sk = S[k]; Tk = Si[k]
        _bundle_rhs(x, Sk, Tk, u, fidx, cidx, coef, exps, m, X, J, kx[0], kS[0], kT[0], A, pw)
        _axpy3(tx, tS, tT, x, Sk, Tk, 0.5 * h, kx[0], kS[0], kT[0])
        _bundle_rhs(tx, tS, tT, u, fidx, cidx, coef, exps, m, X, J, kx[1], kS[1], kT[1], A, pw)
        _axpy3(tx, tS, tT, x, Sk, Tk, 0.5 * h, kx[1], kS[1], kT[1])
        _bundle_rhs(tx, tS, tT, u, fidx, cidx, coef, exps, m, X, J, kx[2], kS[2], kT[2], A, pw)
        _axpy3(tx, tS, tT, x, Sk, Tk, h, kx[2], kS[2], kT[2])
        _bundle_rhs(tx, tS, tT, u, fidx, cidx, coef, exps, m, X, J, kx[3], kS[3], kT[3], A, pw)
        c = h / 6.0
        nrm = 0.0
        for a in range(n):
            v = x[a] + c * (kx[0, a] + 2 * kx[1, a] + 2 * kx[2, a] + kx[3, a])
            G[k + 1, a] = v
            nrm = max(nrm, abs(v))
            for b in range(n):
                v = Sk[a, b] + c * (kS[0, a, b] + 2 * kS[1, a, b] + 2 * kS[2, a, b] + kS[3, a, b])
                S[k + 1, a, b] = v
                w = Tk[a, b] + c * (kT[0, a, b] + 2 * kT[1, a, b] + 2 * kT[2, a, b] + kT[3, a, b])
                Si[k + 1, a, b] = w
                nrm = max(nrm, abs(v), abs(w))
        if not np.isfinite(nrm):
            return NONFINITE, G, S, Si
        if nrm > bound:
            return BLOWUP, G, S, Si
    return OK, G, S, Si


@njit(cache=True, inline="always")
def _combine(u, X, out):
    out[:] = 0.0
    for i in range(X.shape[0]):
        for a in range(X.shape[1]):
            out[a] += u[i] * X[i, a]


@njit(cache=True)
def rk4_endpoint(x0, U, sub, fidx, cidx, coef, exps, m, bound):
    """State-only RK4; returns (status, endpoint)."""
    n = x0.shape[0]
    N = U.shape[0]
    K = N * sub
    h = 1.0 / K
    x = x0.copy()
    X = np.zeros((m, n))
    pw = power_table(exps, n)
    k1 = np.zeros(n); k2 = np.zeros(n); k3 = np.zeros(n); k4 = np.zeros(n)
    for k in range(K):
        u = U[k // sub]
        eval_fields(x, fidx, cidx, coef, exps, m, X, pw)
        _combine(u, X, k1)
        eval_fields(x + 0.5 * h * k1, fidx, cidx, coef, exps, m, X, pw)
        _combine(u, X, k2)
        eval_fields(x + 0.5 * h * k2, fidx, cidx, coef, exps, m, X, pw)
        _combine(u, X, k3)
        eval_fields(x + h * k3, fidx, cidx, coef, exps, m, X, pw)
        _combine(u, X, k4)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        nrm = np.max(np.abs(x))
        if not np.isfinite(nrm):
            return NONFINITE, x
        if nrm > bound:
            return BLOWUP, x
    return OK, x


@njit(cache=True, inline="always")
def _ham_rhs(x, p, fidx, cidx, coef, exps, m, X, J, dx, dp, pw):
    n = x.shape[0]
    eval_fields_jac(x, fidx, cidx, coef, exps, m, X, J, pw)
    dx[:] = 0.0
    dp[:] = 0.0
    for i in range(m):
        hi = 0.0
        for a in range(n):
            hi += p[a] * X[i, a]
        for a in range(n):
            dx[a] += hi * X[i, a]
        for b in range(n):
            acc = 0.0
            for a in range(n):
                acc += p[a] * J[i, a, b]
            dp[b] -= hi * acc


@njit(cache=True)
def rk4_hamiltonian(x0, p0, T, steps, fidx, cidx, coef, exps, m, bound):
    """Normal Hamiltonian flow of H = 1/2 sum (p.X^i)^2 on [0, T]."""
    n = x0.shape[0]
    h = T / steps
    xs = np.zeros((steps + 1, n))
    ps = np.zeros((steps + 1, n))
    xs[0] = x0
    ps[0] = p0
    X = np.zeros((m, n))
    pw = power_table(exps, n)
    J = np.zeros((m, n, n))
    k1x = np.zeros(n); k2x = np.zeros(n); k3x = np.zeros(n); k4x = np.zeros(n)
    k1p = np.zeros(n); k2p = np.zeros(n); k3p = np.zeros(n); k4p = np.zeros(n)
    for k in range(steps):
        x = xs[k]; p = ps[k]
        _ham_rhs(x, p, fidx, cidx, coef, exps, m, X, J, k1x, k1p, pw)
        _ham_rhs(x + 0.5 * h * k1x, p + 0.5 * h * k1p, fidx, cidx, coef, exps, m, X, J, k2x, k2p, pw)
        _ham_rhs(x + 0.5 * h * k2x, p + 0.5 * h * k2p, fidx, cidx, coef, exps, m, X, J, k3x, k3p, pw)
        _ham_rhs(x + h * k3x, p + h * k3p, fidx, cidx, coef, exps, m, X, J, k4x, k4p, pw)
        xs[k + 1] = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        ps[k + 1] = p + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        nrm = max(np.max(np.abs(xs[k + 1])), np.max(np.abs(ps[k + 1])))
        if not np.isfinite(nrm):
            return NONFINITE, xs, ps
        if nrm > bound:
            return BLOWUP, xs, ps
    return OK, xs, ps


@njit(cache=True, inline="always")
def _rhs_given(X, J, S, Si, u, m, dx, dS, dSi, A):
    """Bundle derivatives from field values/Jacobians already evaluated at x."""
    n = X.shape[1]
    for a in range(n):
        acc = 0.0
        for i in range(m):
            acc += u[i] * X[i, a]
        dx[a] = acc
        for b in range(n):
            acc = 0.0
            for i in range(m):
                acc += u[i] * J[i, a, b]
            A[a, b] = acc
    for a in range(n):
        for b in range(n):
            s1 = 0.0
            s2 = 0.0
            for c in range(n):
                s1 += A[a, c] * S[c, b]
                s2 += Si[a, c] * A[c, b]
            dS[a, b] = s1
            dSi[a, b] = -s2


@njit(cache=True, inline="always")
def _node_terms(X, J, Si, u, m, Gv, Gd, D):
    """Gv = S^-1 B and Gd = S^-1 (B' - A B) at a node for the control value u."""
    n = X.shape[1]
    # D[c, i] = (J_i gamma')_c - (A X_i)_c with gamma' = sum u_j X_j, A = sum u_j J_j
    for c in range(n):
        for i in range(m):
            acc = 0.0
            for j in range(m):
                for b in range(n):
                    acc += u[j] * (J[i, c, b] * X[j, b] - J[j, c, b] * X[i, b])
            D[c, i] = acc
    for a in range(n):
        for i in range(m):
            g = 0.0
            d = 0.0
            for c in range(n):
                g += Si[a, c] * X[i, c]
                d += Si[a, c] * D[c, i]
            Gv[a, i] = g
            Gd[a, i] = d


@njit(cache=True)
def rk4_jacobian(x0, U, sub, fidx, cidx, coef, exps, m, bound):
    """Endpoint and D_uE matrix (n, N*m) in one RK4 pass.

    Each step contributes h/2 (G_l + G_r) + h^2/12 (G'_l - G'_r) to the
    integral of S^-1 B over its segment, with G' evaluated using the
    control of the segment that owns the step.
    """
    n = x0.shape[0]
    N = U.shape[0]
    K = N * sub
    h = 1.0 / K
    x = x0.copy()
    S = np.eye(n)
    Si = np.eye(n)
    acc = np.zeros((N, n, m))
    Xn = np.zeros((m, n)); Jn = np.zeros((m, n, n))
    X = np.zeros((m, n)); J = np.zeros((m, n, n))
    pw = power_table(exps, n)
    A = np.zeros((n, n))
    D = np.zeros((n, m))
    GvL = np.zeros((n, m)); GdL = np.zeros((n, m))
    GvR = np.zeros((n, m)); GdR = np.zeros((n, m))
    kx = np.zeros((4, n)); kS = np.zeros((4, n, n)); kT = np.zeros((4, n, n))
    tx = np.zeros(n); tS = np.zeros((n, n)); tT = np.zeros((n, n))
    xn = np.zeros(n); Sn = np.zeros((n, n)); Tn = np.zeros((n, n))
    c12 = h * h / 12.0
    for k in range(K + 1):
        eval_fields_jac(x, fidx, cidx, coef, exps, m, Xn, Jn, pw)
        if k > 0:
            s = (k - 1) // sub
            _node_terms(Xn, Jn, Si, U[s], m, GvR, GdR, D)
            for a in range(n):
                for i in range(m):
                    acc[s, a, i] += 0.5 * h * (GvL[a, i] + GvR[a, i]) + c12 * (GdL[a, i] - GdR[a, i])
        if k == K:
            break
        u = U[k // sub]
        _node_terms(Xn, Jn, Si, u, m, GvL, GdL, D)
        _rhs_given(Xn, Jn, S, Si, u, m, kx[0], kS[0], kT[0], A)
        _axpy3(tx, tS, tT, x, S, Si, 0.5 * h, kx[0], kS[0], kT[0])
        _bundle_rhs(tx, tS, tT, u, fidx, cidx, coef, exps, m, X, J, kx[1], kS[1], kT[1], A, pw)
        _axpy3(tx, tS, tT, x, S, Si, 0.5 * h, kx[1], kS[1], kT[1])
        _bundle_rhs(tx, tS, tT, u, fidx, cidx, coef, exps, m, X, J, kx[2], kS[2], kT[2], A, pw)
        _axpy3(tx, tS, tT, x, S, Si, h, kx[2], kS[2], kT[2])
        _bundle_rhs(tx, tS, tT, u, fidx, cidx, coef, exps, m, X, J, kx[3], kS[3], kT[3], A, pw)
        c = h / 6.0
        nrm = 0.0
        for a in range(n):
            v = x[a] + c * (kx[0, a] + 2 * kx[1, a] + 2 * kx[2, a] + kx[3, a])
            xn[a] = v
            nrm = max(nrm, abs(v))
            for b in range(n):
                v = S[a, b] + c * (kS[0, a, b] + 2 * kS[1, a, b] + 2 * kS[2, a, b] + kS[3, a, b])
                Sn[a, b] = v
                w = Si[a, b] + c * (kT[0, a, b] + 2 * kT[1, a, b] + 2 * kT[2, a, b] + kT[3, a, b])
                Tn[a, b] = w
                nrm = max(nrm, abs(v), abs(w))
        if not np.isfinite(nrm):
            return NONFINITE, x, np.zeros((n, N * m))
        if nrm > bound:
            return BLOWUP, x, np.zeros((n, N * m))
        x[:] = xn
        S[:, :] = Sn
        Si[:, :] = Tn
    mat = np.zeros((n, N * m))
    for s in range(N):
        for i in range(m):
            for a in range(n):
                v = 0.0
                for b in range(n):
                    v += S[a, b] * acc[s, b, i]
                mat[a, s * m + i] = v
    return OK, x, mat
