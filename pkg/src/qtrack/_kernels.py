"""Compiled hot loops for ensembles of tracked quantiles.

An ensemble is an ``(L, 8)`` float64 array (slot order in
``qtrack.mse_tracking``) plus an ``(L,)`` int64 update counter.  Every
kernel mutates those arrays in place and writes into caller-owned output
buffers, so the steady-state loop allocates nothing.

Uniform draws for Frugal are consumed from a flat buffer, two per member per
sample (main first, then auxiliary), member by member.
"""

import math

import numpy as np
from numba import njit

Q_MAIN, Q_AUX, MU, SIGMA2, QPORTION, H, GPRIME, LAM = range(8)
DUMIQE = 0
FRUGAL = 1


@njit(cache=True, inline="always")
def _move(q_hat, q, lam, x, kind, literal, u):
    if kind == DUMIQE:
        if x >= q_hat:
            return q_hat + lam * q * q_hat
        return q_hat - lam * (1.0 - q) * q_hat
    if literal:
        up = q < u
        down = 1.0 - q < u
    else:
        up = u <= q
        down = u <= 1.0 - q
    if x >= q_hat:
        if up:
            return q_hat + lam
        return q_hat
    if down:
        return q_hat - lam
    return q_hat


@njit(cache=True, inline="always")
def member_mse(S, i):
    g = S[i, GPRIME]
    if math.isnan(g):
        return S[i, SIGMA2]
    return g * g * S[i, H] + S[i, SIGMA2]


@njit(cache=True)
def advance(S, counts, x, q, qt, kind, literal, alpha, beta, gamma, kappa, eta, U, upos):
    """One sample through every member; returns the new uniform-buffer position."""
    L = S.shape[0]
    dq_inv = 1.0 / (q - qt)
    for i in range(L):
        qm = S[i, Q_MAIN]
        lam = S[i, LAM]
        below = 1.0 if x <= qm else 0.0
        qp = (1.0 - gamma) * S[i, QPORTION] + gamma * below
        d = qp - q
        S[i, QPORTION] = qp
        S[i, H] = (1.0 - kappa) * S[i, H] + kappa * d * d
        if kind == FRUGAL:
            u1 = U[upos]
            u2 = U[upos + 1]
            upos += 2
        else:
            u1 = 0.0
            u2 = 0.0
        qm = _move(qm, q, lam, x, kind, literal, u1)
        qa = _move(S[i, Q_AUX], qt, lam, x, kind, literal, u2)
        S[i, Q_MAIN] = qm
        S[i, Q_AUX] = qa
        mu_prev = S[i, MU]
        mu = (1.0 - alpha) * mu_prev + alpha * qm
        s2 = (1.0 - beta) * S[i, SIGMA2] + beta * (qm - mu) * (qm - mu_prev)
        if s2 < 0.0:
            s2 = 0.0
        S[i, MU] = mu
        S[i, SIGMA2] = s2
        slope = (qm - qa) / (q - qt)
        g = S[i, GPRIME]
        if math.isnan(g):
            S[i, GPRIME] = slope
        else:
            S[i, GPRIME] = (1.0 - eta) * g + eta * slope
        counts[i] += 1
    return upos


@njit(cache=True)
def select_index(S, counts, warm_n, friction, current):
    """Argmin of estimated MSE over warm members; -1 if none is warm.

    Ties go to the lowest index (smallest lambda).  With friction the result
    is clamped to one step from ``current``.
    """
    best = -1
    best_v = np.inf
    for i in range(S.shape[0]):
        if counts[i] >= warm_n:
            v = member_mse(S, i)
            if v < best_v:
                best_v = v
                best = i
    if best >= 0 and friction and current >= 0:
        if best > current + 1:
            best = current + 1
        elif best < current - 1:
            best = current - 1
    return best


@njit(cache=True)
def select_block(S, counts, xs, U, q, qt, kind, literal, alpha, beta, gamma, kappa, eta,
                 warm_n, friction, current, fallback, pinned, margin, grow_low, grow_high,
                 out_est, out_lam, out_mse, out_idx, out_off):
    """Run an ensemble with per-sample selection over ``xs``.

    ``pinned >= 0`` forces that member as output.  Otherwise the warm argmin
    is used, or ``fallback`` before anything is warm.  Returns
    ``(steps_done, current, uniforms_used, wants_extension)``; the loop stops
    early when the selection sits within ``margin`` of an end of the grid that
    may still grow.
    """
    L = S.shape[0]
    upos = 0
    for t in range(xs.shape[0]):
        upos = advance(S, counts, xs[t], q, qt, kind, literal, alpha, beta, gamma, kappa, eta, U, upos)
        if pinned >= 0:
            current = pinned
            warm_pick = False
        else:
            best = select_index(S, counts, warm_n, friction, current)
            warm_pick = best >= 0
            current = best if warm_pick else fallback
        k = out_off + t
        out_est[k] = S[current, Q_MAIN]
        out_lam[k] = S[current, LAM]
        out_mse[k] = member_mse(S, current)
        out_idx[k] = current
        if warm_pick and margin > 0:
            if (grow_low and current < margin) or (grow_high and L - 1 - current < margin):
                return t + 1, current, upos, True
    return xs.shape[0], current, upos, False


@njit(cache=True)
def stats_block(S, counts, xs, U, truths, q, qt, kind, literal, alpha, beta, gamma, kappa, eta,
                t0, skip, acc_mse_hat, acc_sq_err):
    """Advance every member and accumulate per-member estimated MSE and squared
    error against ``truths`` for global steps ``t0 + t >= skip``."""
    L = S.shape[0]
    upos = 0
    for t in range(xs.shape[0]):
        upos = advance(S, counts, xs[t], q, qt, kind, literal, alpha, beta, gamma, kappa, eta, U, upos)
        if t0 + t >= skip:
            for i in range(L):
                acc_mse_hat[i] += member_mse(S, i)
                e = S[i, Q_MAIN] - truths[t]
                acc_sq_err[i] += e * e
    return upos


@njit(cache=True)
def plain_block(qh, lams, xs, U, truths, q, kind, literal, t0, skip, acc_sq_err):
    """Constant-lambda estimators only (no MSE tracking); one uniform per member."""
    L = qh.shape[0]
    upos = 0
    for t in range(xs.shape[0]):
        x = xs[t]
        for i in range(L):
            u = 0.0
            if kind == FRUGAL:
                u = U[upos]
                upos += 1
            qh[i] = _move(qh[i], q, lams[i], x, kind, literal, u)
        if t0 + t >= skip:
            for i in range(L):
                e = qh[i] - truths[t]
                acc_sq_err[i] += e * e
    return upos
