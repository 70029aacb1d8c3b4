"""Batched numpy implementation of the cell-block updates.

Every cell ``c = (a, t)`` carries a block ``x = (beta[c], u[c])`` whose
full conditional is

    f(x) = sum_g [D eta - N exp(eta)] - 0.5 sum_p pb (beta - mu)^2 - 0.5 sum_g pu u^2,
    eta = V' beta + u.

Each sweep makes two Metropolis moves per cell: an independence proposal from
the Laplace approximation at the conditional mode, then a random walk with
the same covariance scaled by ``rw_scale``. Cells are conditionally
independent given the hyperparameters, so all of them are moved at once.
"""

from __future__ import annotations

import numpy as np

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 60
MAX_HALVINGS = 40


def _logf(D, N, V, mu, pb, pu, beta, u):
    eta = beta @ V + u
    return (
        np.sum(D * eta - N * np.exp(eta), axis=1)
        - 0.5 * np.sum(pb * (beta - mu) ** 2, axis=1)
        - 0.5 * np.sum(pu * u * u, axis=1)
    )


def _curvature(N, V, pb, pu, beta, u):
    lam = N * np.exp(beta @ V + u)
    W = lam + pu
    S = np.einsum("pg,cg,qg->cpq", V, lam * pu / W, V)
    S[:, np.arange(V.shape[0]), np.arange(V.shape[0])] += pb
    return lam, W, S


def conditional_mode(D, N, V, mu, pb, pu, beta0, u0):
    """Newton ascent with step halving from ``(beta0, u0)`` for all cells."""
    beta = beta0.copy()
    u = u0.copy()
    f = _logf(D, N, V, mu, pb, pu, beta, u)
    active = np.ones(D.shape[0], dtype=bool)
    for _ in range(NEWTON_MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        b, uu = beta[idx], u[idx]
        lam, W, S = _curvature(N[idx], V, pb[idx], pu, b, uu)
        r = D[idx] - lam
        gb = r @ V.T - (b - mu[idx]) * pb[idx]
        gu = r - uu * pu
        rhs = gb - (lam / W * gu) @ V.T
        db = np.linalg.solve(S, rhs[..., None])[..., 0]
        du = (gu - lam * (db @ V)) / W
        step = np.ones(idx.size)
        f0 = f[idx]
        todo = np.ones(idx.size, dtype=bool)
        fn = f0.copy()
        for _ in range(MAX_HALVINGS):
            cand_b = b + step[:, None] * db
            cand_u = uu + step[:, None] * du
            fc = _logf(D[idx], N[idx], V, mu[idx], pb[idx], pu, cand_b, cand_u)
            ok = np.isfinite(fc) & (fc >= f0 - 1e-12 * np.maximum(1.0, np.abs(f0)))
            newly = todo & ok
            fn[newly] = fc[newly]
            todo &= ~ok
            if not todo.any():
                break
            step[todo] *= 0.5
        step[todo] = 0.0
        beta[idx] = b + step[:, None] * db
        u[idx] = uu + step[:, None] * du
        f[idx] = np.where(todo, f0, fn)
        size = np.maximum(np.max(np.abs(step[:, None] * db), axis=1), np.max(np.abs(step[:, None] * du), axis=1))
        active[idx] = size > NEWTON_TOL
    return beta, u


def _quad(S, lam, W, V, db, du):
    qb = np.einsum("cp,cpq,cq->c", db, S, db)
    e = du + lam * (db @ V) / W
    return qb + np.sum(W * e * e, axis=1)


def _draw(L, lam, W, V, z):
    P = V.shape[0]
    # beta part has precision S = L L', so solve L' db = z1
    db = np.linalg.solve(np.swapaxes(L, 1, 2), z[:, :P, None])[..., 0]
    du = -lam * (db @ V) / W + z[:, P:] / np.sqrt(W)
    return db, du


def update_cells(D, N, V, mu, pb, pu, beta, u, mode_beta, mode_u, z, logU, rw_scale):
    """One sweep over all cells; arrays are updated in place.

    Parameters
    ----------
    D, N : (C, G)
    V : (P, G)
    mu, pb : (C, P)
        Prior means and precisions of ``beta``.
    pu : (G,)
        Prior precisions of ``u``.
    beta, u : (C, P), (C, G)
        Current state (overwritten).
    mode_beta, mode_u : (C, P), (C, G)
        Warm start for the mode search (overwritten with the new mode).
    z : (C, 2, P + G)
        Standard normal draws for the two moves.
    logU : (C, 2)
        Log uniforms for the two acceptance tests.
    rw_scale : (C,)

    Returns
    -------
    ndarray of int, shape (C, 2)
        Acceptance indicators of the independence and random-walk moves.
    """
    mb, mu_ = conditional_mode(D, N, V, mu, pb, pu, mode_beta, mode_u)
    mode_beta[...] = mb
    mode_u[...] = mu_
    lam, W, S = _curvature(N, V, pb, pu, mb, mu_)
    L = np.linalg.cholesky(S)
    acc = np.zeros((D.shape[0], 2), dtype=np.int64)

    f_cur = _logf(D, N, V, mu, pb, pu, beta, u)
    db, du = _draw(L, lam, W, V, z[:, 0])
    prop_b, prop_u = mb + db, mu_ + du
    f_prop = _logf(D, N, V, mu, pb, pu, prop_b, prop_u)
    q_cur = _quad(S, lam, W, V, beta - mb, u - mu_)
    q_prop = np.sum(z[:, 0] ** 2, axis=1)
    log_alpha = f_prop - f_cur + 0.5 * (q_prop - q_cur)
    ok = logU[:, 0] < log_alpha
    beta[ok] = prop_b[ok]
    u[ok] = prop_u[ok]
    f_cur = np.where(ok, f_prop, f_cur)
    acc[:, 0] = ok

    db, du = _draw(L, lam, W, V, z[:, 1])
    prop_b = beta + rw_scale[:, None] * db
    prop_u = u + rw_scale[:, None] * du
    f_prop = _logf(D, N, V, mu, pb, pu, prop_b, prop_u)
    ok = logU[:, 1] < f_prop - f_cur
    beta[ok] = prop_b[ok]
    u[ok] = prop_u[ok]
    acc[:, 1] = ok
    return acc
