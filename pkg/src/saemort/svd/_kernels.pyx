# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled cell-block updates; same contract as ``_kernels_py.update_cells``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, isfinite, sqrt

cnp.import_array()

DEF MAXP = 8
DEF MAXG = 64
cdef double NEWTON_TOL = 1e-10
cdef int NEWTON_MAX_ITER = 60
cdef int MAX_HALVINGS = 40


cdef double _logf(const double[:] D, const double[:] N, const double[:, :] V, const double[:] mu,
                  const double[:] pb, const double[:] pu, const double* beta, const double* u,
                  int P, int G) noexcept nogil:
    cdef double f = 0.0, eta, d
    cdef int g, p
    for g in range(G):
        eta = u[g]
        for p in range(P):
            eta += beta[p] * V[p, g]
        f += D[g] * eta - N[g] * exp(eta) - 0.5 * pu[g] * u[g] * u[g]
    for p in range(P):
        d = beta[p] - mu[p]
        f -= 0.5 * pb[p] * d * d
    return f


cdef void _curvature(const double[:] N, const double[:, :] V, const double[:] pb, const double[:] pu,
                     const double* beta, const double* u, double* lam, double* W, double* S,
                     int P, int G) noexcept nogil:
    cdef int g, p, q
    cdef double eta, w
    for p in range(P * P):
        S[p] = 0.0
    for g in range(G):
        eta = u[g]
        for p in range(P):
            eta += beta[p] * V[p, g]
        lam[g] = N[g] * exp(eta)
        W[g] = lam[g] + pu[g]
        w = lam[g] * pu[g] / W[g]
        for p in range(P):
            for q in range(p + 1):
                S[p * P + q] += V[p, g] * w * V[q, g]
    for p in range(P):
        S[p * P + p] += pb[p]
        for q in range(p):
            S[q * P + p] = S[p * P + q]


cdef int _cholesky(double* S, double* L, int P) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(P * P):
        L[i] = 0.0
    for i in range(P):
        for j in range(i + 1):
            s = S[i * P + j]
            for k in range(j):
                s -= L[i * P + k] * L[j * P + k]
            if i == j:
                if s <= 0.0:
                    return -1
                L[i * P + i] = sqrt(s)
            else:
                L[i * P + j] = s / L[j * P + j]
    return 0


cdef void _chol_solve(const double* L, const double* b, double* x, int P) noexcept nogil:
    cdef int i, k
    cdef double s
    cdef double y[MAXP]
    for i in range(P):
        s = b[i]
        for k in range(i):
            s -= L[i * P + k] * y[k]
        y[i] = s / L[i * P + i]
    for i in range(P - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, P):
            s -= L[k * P + i] * x[k]
        x[i] = s / L[i * P + i]


cdef void _back_solve(const double* L, const double* z, double* x, int P) noexcept nogil:
    # solve L' x = z
    cdef int i, k
    cdef double s
    for i in range(P - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, P):
            s -= L[k * P + i] * x[k]
        x[i] = s / L[i * P + i]


cdef void _draw(const double* L, const double* lam, const double* W, const double[:, :] V,
                const double[:] z, double* db, double* du, int P, int G) noexcept nogil:
    cdef int g, p
    cdef double zb[MAXP]
    cdef double vd
    for p in range(P):
        zb[p] = z[p]
    _back_solve(L, zb, db, P)
    for g in range(G):
        vd = 0.0
        for p in range(P):
            vd += V[p, g] * db[p]
        du[g] = -lam[g] * vd / W[g] + z[P + g] / sqrt(W[g])


cdef double _quad(const double* S, const double* lam, const double* W, const double[:, :] V,
                  const double* db, const double* du, int P, int G) noexcept nogil:
    cdef int p, q, g
    cdef double out = 0.0, vd, e
    for p in range(P):
        for q in range(P):
            out += db[p] * S[p * P + q] * db[q]
    for g in range(G):
        vd = 0.0
        for p in range(P):
            vd += V[p, g] * db[p]
        e = du[g] + lam[g] * vd / W[g]
        out += W[g] * e * e
    return out


def update_cells(const double[:, :] D, const double[:, :] N, const double[:, :] V,
                 const double[:, :] mu, const double[:, :] pb, const double[:] pu,
                 double[:, :] beta, double[:, :] u, double[:, :] mode_beta, double[:, :] mode_u,
                 const double[:, :, :] z, const double[:, :] logU, const double[:] rw_scale):
    cdef int C = D.shape[0], G = D.shape[1], P = V.shape[0]
    if P > MAXP or G > MAXG:
        raise ValueError("too many components or age groups for the compiled kernel")
    acc_arr = np.zeros((C, 2), dtype=np.int64)
    cdef long long[:, :] acc = acc_arr
    cdef int c, it, h, p, g, bad = 0
    cdef double xb[MAXP]
    cdef double xu[MAXG]
    cdef double cb[MAXP]
    cdef double cu[MAXG]
    cdef double db[MAXP]
    cdef double du[MAXG]
    cdef double lam[MAXG]
    cdef double W[MAXG]
    cdef double S[MAXP * MAXP]
    cdef double L[MAXP * MAXP]
    cdef double gb[MAXP]
    cdef double rhs[MAXP]
    cdef double gu[MAXG]
    cdef double f0, fc, t, size, r, vd, fcur, fprop, qcur, qprop
    with nogil:
        for c in range(C):
            # conditional mode by Newton with step halving
            for p in range(P):
                xb[p] = mode_beta[c, p]
            for g in range(G):
                xu[g] = mode_u[c, g]
            f0 = _logf(D[c], N[c], V, mu[c], pb[c], pu, xb, xu, P, G)
            for it in range(NEWTON_MAX_ITER):
                _curvature(N[c], V, pb[c], pu, xb, xu, lam, W, S, P, G)
                for p in range(P):
                    gb[p] = -(xb[p] - mu[c, p]) * pb[c, p]
                for g in range(G):
                    r = D[c, g] - lam[g]
                    gu[g] = r - xu[g] * pu[g]
                    for p in range(P):
                        gb[p] += V[p, g] * r
                for p in range(P):
                    rhs[p] = gb[p]
                    for g in range(G):
                        rhs[p] -= V[p, g] * lam[g] / W[g] * gu[g]
                if _cholesky(S, L, P) != 0:
                    bad = 1
                    break
                _chol_solve(L, rhs, db, P)
                for g in range(G):
                    vd = 0.0
                    for p in range(P):
                        vd += V[p, g] * db[p]
                    du[g] = (gu[g] - lam[g] * vd) / W[g]
                t = 1.0
                for h in range(MAX_HALVINGS):
                    for p in range(P):
                        cb[p] = xb[p] + t * db[p]
                    for g in range(G):
                        cu[g] = xu[g] + t * du[g]
                    fc = _logf(D[c], N[c], V, mu[c], pb[c], pu, cb, cu, P, G)
                    if isfinite(fc) and fc >= f0 - 1e-12 * (fabs(f0) if fabs(f0) > 1.0 else 1.0):
                        break
                    t *= 0.5
                else:
                    t = 0.0
                size = 0.0
                if t > 0.0:
                    for p in range(P):
                        xb[p] = cb[p]
                        if fabs(t * db[p]) > size:
                            size = fabs(t * db[p])
                    for g in range(G):
                        xu[g] = cu[g]
                        if fabs(t * du[g]) > size:
                            size = fabs(t * du[g])
                    f0 = fc
                if size <= NEWTON_TOL:
                    break
            if bad:
                break
            for p in range(P):
                mode_beta[c, p] = xb[p]
            for g in range(G):
                mode_u[c, g] = xu[g]
            _curvature(N[c], V, pb[c], pu, xb, xu, lam, W, S, P, G)
            if _cholesky(S, L, P) != 0:
                bad = 1
                break

            # independence move from the Laplace approximation
            for p in range(P):
                cb[p] = beta[c, p]
                db[p] = cb[p] - xb[p]
            for g in range(G):
                cu[g] = u[c, g]
                du[g] = cu[g] - xu[g]
            fcur = _logf(D[c], N[c], V, mu[c], pb[c], pu, cb, cu, P, G)
            qcur = _quad(S, lam, W, V, db, du, P, G)
            _draw(L, lam, W, V, z[c, 0], db, du, P, G)
            qprop = 0.0
            for p in range(P + G):
                qprop += z[c, 0, p] * z[c, 0, p]
            for p in range(P):
                db[p] += xb[p]
            for g in range(G):
                du[g] += xu[g]
            fprop = _logf(D[c], N[c], V, mu[c], pb[c], pu, db, du, P, G)
            if logU[c, 0] < fprop - fcur + 0.5 * (qprop - qcur):
                for p in range(P):
                    beta[c, p] = db[p]
                for g in range(G):
                    u[c, g] = du[g]
                fcur = fprop
                acc[c, 0] = 1

            # random-walk move with the same covariance
            _draw(L, lam, W, V, z[c, 1], db, du, P, G)
            for p in range(P):
                db[p] = beta[c, p] + rw_scale[c] * db[p]
            for g in range(G):
                du[g] = u[c, g] + rw_scale[c] * du[g]
            fprop = _logf(D[c], N[c], V, mu[c], pb[c], pu, db, du, P, G)
            if logU[c, 1] < fprop - fcur:
                for p in range(P):
                    beta[c, p] = db[p]
                for g in range(G):
                    u[c, g] = du[g]
                acc[c, 1] = 1
    if bad:
        raise np.linalg.LinAlgError("conditional precision is not positive definite")
    return acc_arr
