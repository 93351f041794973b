# cython: language_level=3
"""Compiled twins of the kernels in ``_pykernels``.

Same signatures and array conventions; see that module's docstring.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh, log, M_PI

cnp.import_array()

NAME = "cython"


cdef inline double _sig(double a) nogil:
    cdef double e
    if a >= 0:
        return 1.0 / (1.0 + exp(-a))
    e = exp(a)
    return e / (1.0 + e)


# ---------------------------------------------------------------------------
# GRU cell
# ---------------------------------------------------------------------------

def gru_forward(double[:, ::1] x, double[:, ::1] h, double[:, ::1] Wx,
                double[:, ::1] Wh, double[::1] bx, double[::1] bh):
    cdef Py_ssize_t B = x.shape[0], I = x.shape[1], H = h.shape[1]
    cdef Py_ssize_t b, i, j, H3 = 3 * H
    h_new_a = np.empty((B, H))
    r_a = np.empty((B, H))
    u_a = np.empty((B, H))
    n_a = np.empty((B, H))
    ghn_a = np.empty((B, H))
    gx_a = np.empty(H3)
    gh_a = np.empty(H3)
    cdef double[:, ::1] h_new = h_new_a, r = r_a, u = u_a, n = n_a, ghn = ghn_a
    cdef double[::1] gx = gx_a, gh = gh_a
    cdef double xv, hv
    with nogil:
        for b in range(B):
            for j in range(H3):
                gx[j] = bx[j]
                gh[j] = bh[j]
            for i in range(I):
                xv = x[b, i]
                if xv != 0.0:
                    for j in range(H3):
                        gx[j] += xv * Wx[i, j]
            for i in range(H):
                hv = h[b, i]
                if hv != 0.0:
                    for j in range(H3):
                        gh[j] += hv * Wh[i, j]
            for j in range(H):
                r[b, j] = _sig(gx[j] + gh[j])
                u[b, j] = _sig(gx[H + j] + gh[H + j])
                ghn[b, j] = gh[2 * H + j]
                n[b, j] = tanh(gx[2 * H + j] + r[b, j] * gh[2 * H + j])
                h_new[b, j] = (1.0 - u[b, j]) * n[b, j] + u[b, j] * h[b, j]
    return h_new_a, r_a, u_a, n_a, ghn_a


def gru_backward(double[:, ::1] dh_new, double[:, ::1] x, double[:, ::1] h,
                 double[:, ::1] Wx, double[:, ::1] Wh, double[:, ::1] r,
                 double[:, ::1] u, double[:, ::1] n, double[:, ::1] ghn):
    cdef Py_ssize_t B = x.shape[0], I = x.shape[1], H = h.shape[1]
    cdef Py_ssize_t b, i, j, H3 = 3 * H
    dx_a = np.zeros((B, I))
    dh_a = np.zeros((B, H))
    dWx_a = np.zeros((I, H3))
    dWh_a = np.zeros((H, H3))
    dbx_a = np.zeros(H3)
    dbh_a = np.zeros(H3)
    dgx_a = np.empty(H3)
    dgh_a = np.empty(H3)
    cdef double[:, ::1] dx = dx_a, dh = dh_a, dWx = dWx_a, dWh = dWh_a
    cdef double[::1] dbx = dbx_a, dbh = dbh_a, dgx = dgx_a, dgh = dgh_a
    cdef double g, dn, du, dan, dr, acc, xv, hv
    with nogil:
        for b in range(B):
            for j in range(H):
                g = dh_new[b, j]
                dn = g * (1.0 - u[b, j])
                du = g * (h[b, j] - n[b, j])
                dh[b, j] = g * u[b, j]
                dan = dn * (1.0 - n[b, j] * n[b, j])
                dr = dan * ghn[b, j]
                dgx[j] = dr * r[b, j] * (1.0 - r[b, j])
                dgx[H + j] = du * u[b, j] * (1.0 - u[b, j])
                dgx[2 * H + j] = dan
                dgh[j] = dgx[j]
                dgh[H + j] = dgx[H + j]
                dgh[2 * H + j] = dan * r[b, j]
            for j in range(H3):
                dbx[j] += dgx[j]
                dbh[j] += dgh[j]
            for i in range(I):
                xv = x[b, i]
                acc = 0.0
                for j in range(H3):
                    acc += dgx[j] * Wx[i, j]
                    dWx[i, j] += xv * dgx[j]
                dx[b, i] = acc
            for i in range(H):
                hv = h[b, i]
                acc = 0.0
                for j in range(H3):
                    acc += dgh[j] * Wh[i, j]
                    dWh[i, j] += hv * dgh[j]
                dh[b, i] += acc
    return dx_a, dh_a, dWx_a, dWh_a, dbx_a, dbh_a


# ---------------------------------------------------------------------------
# Kernel pre-imputation
# ---------------------------------------------------------------------------

cdef void _pieces(Py_ssize_t b, double[:, :, ::1] x, double[:, :, ::1] m,
                  double[:, ::1] times, double[::1] alpha, double[:, ::1] rho,
                  double[:, :, ::1] K, double[:, :, ::1] L, double[:, ::1] xbar,
                  double[:, ::1] den, double[:, ::1] imp) noexcept nogil:
    """Fill per-sample buffers: K[j,s,t], L[i,j,s], xbar[j,s], den[i,s], imp[i,s]."""
    cdef Py_ssize_t d = alpha.shape[0], w = times.shape[1]
    cdef Py_ssize_t i, j, s, t
    cdef double dt, acc, accS, ljj, num
    for j in range(d):
        for s in range(w):
            for t in range(w):
                dt = times[b, s] - times[b, t]
                K[j, s, t] = exp(-alpha[j] * dt * dt)
    for i in range(d):
        for j in range(d):
            for s in range(w):
                acc = 0.0
                for t in range(w):
                    if m[b, i, t] != 0.0:
                        acc += m[b, i, t] * K[j, s, t]
                L[i, j, s] = acc
    for j in range(d):
        for s in range(w):
            accS = 0.0
            for t in range(w):
                if m[b, j, t] != 0.0:
                    accS += K[j, s, t] * m[b, j, t] * x[b, j, t]
            ljj = L[j, j, s]
            if ljj > 0:
                xbar[j, s] = accS / ljj
            else:
                xbar[j, s] = 0.0
    for i in range(d):
        for s in range(w):
            acc = 0.0
            num = 0.0
            for j in range(d):
                acc += L[i, j, s]
                num += rho[i, j] * L[i, j, s] * xbar[j, s]
            den[i, s] = acc
            if acc > 0:
                imp[i, s] = num / acc
            else:
                imp[i, s] = 0.0


def preimpute_forward(double[:, :, ::1] x, double[:, :, ::1] m, double[:, ::1] times,
                      double[::1] alpha, double[:, ::1] rho):
    cdef Py_ssize_t B = x.shape[0], d = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t b, i, s
    dense_a = np.empty((B, d, w))
    xbar_a = np.empty((B, d, w))
    lam_a = np.empty((B, d, w))
    cdef double[:, :, ::1] dense = dense_a, xbar_o = xbar_a, lam = lam_a
    cdef double[:, :, ::1] K = np.empty((d, w, w))
    cdef double[:, :, ::1] L = np.empty((d, d, w))
    cdef double[:, ::1] xbar = np.empty((d, w)), den = np.empty((d, w)), imp = np.empty((d, w))
    with nogil:
        for b in range(B):
            _pieces(b, x, m, times, alpha, rho, K, L, xbar, den, imp)
            for i in range(d):
                for s in range(w):
                    xbar_o[b, i, s] = xbar[i, s]
                    lam[b, i, s] = L[i, i, s]
                    if m[b, i, s] > 0:
                        dense[b, i, s] = x[b, i, s]
                    else:
                        dense[b, i, s] = imp[i, s]
    return dense_a, xbar_a, lam_a


def preimpute_backward(double[:, :, ::1] g, double[:, :, ::1] x, double[:, :, ::1] m,
                       double[:, ::1] times, double[::1] alpha, double[:, ::1] rho):
    cdef Py_ssize_t B = x.shape[0], d = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t b, i, j, s, t
    dalpha_a = np.zeros(d)
    drho_a = np.zeros((d, d))
    cdef double[::1] dalpha = dalpha_a
    cdef double[:, ::1] drho = drho_a
    cdef double[:, :, ::1] K = np.empty((d, w, w))
    cdef double[:, :, ::1] L = np.empty((d, d, w))
    cdef double[:, :, ::1] dL = np.empty((d, d, w))
    cdef double[:, ::1] xbar = np.empty((d, w)), den = np.empty((d, w)), imp = np.empty((d, w))
    cdef double[:, ::1] dxbar = np.empty((d, w)), dS = np.empty((d, w))
    cdef double gN, gden, ljj, dk, dt
    with nogil:
        for b in range(B):
            _pieces(b, x, m, times, alpha, rho, K, L, xbar, den, imp)
            for j in range(d):
                for s in range(w):
                    dxbar[j, s] = 0.0
                    for i in range(d):
                        dL[i, j, s] = 0.0
            for i in range(d):
                for s in range(w):
                    if m[b, i, s] != 0.0 or den[i, s] <= 0:
                        continue
                    gN = g[b, i, s] / den[i, s]
                    gden = -g[b, i, s] * imp[i, s] / den[i, s]
                    for j in range(d):
                        drho[i, j] += gN * L[i, j, s] * xbar[j, s]
                        dL[i, j, s] += gN * rho[i, j] * xbar[j, s] + gden
                        dxbar[j, s] += gN * rho[i, j] * L[i, j, s]
            for j in range(d):
                for s in range(w):
                    ljj = L[j, j, s]
                    if ljj > 0:
                        dS[j, s] = dxbar[j, s] / ljj
                        dL[j, j, s] -= dxbar[j, s] * xbar[j, s] / ljj
                    else:
                        dS[j, s] = 0.0
            for j in range(d):
                for s in range(w):
                    for t in range(w):
                        dk = dS[j, s] * m[b, j, t] * x[b, j, t]
                        for i in range(d):
                            dk += dL[i, j, s] * m[b, i, t]
                        dt = times[b, s] - times[b, t]
                        dalpha[j] -= dk * dt * dt * K[j, s, t]
    return dalpha_a, drho_a


# ---------------------------------------------------------------------------
# Marginal recursion
# ---------------------------------------------------------------------------

def marginals_forward(double[:, ::1] q1, double[:, :, :, ::1] cond):
    cdef Py_ssize_t B = q1.shape[0], k = q1.shape[1], w = cond.shape[1] + 1
    cdef Py_ssize_t b, t, s, r
    out_a = np.empty((B, w, k))
    cdef double[:, :, ::1] out = out_a
    cdef double acc
    with nogil:
        for b in range(B):
            for r in range(k):
                out[b, 0, r] = q1[b, r]
            for t in range(1, w):
                for r in range(k):
                    acc = 0.0
                    for s in range(k):
                        acc += out[b, t - 1, s] * cond[b, t - 1, s, r]
                    out[b, t, r] = acc
    return out_a


def marginals_backward(double[:, :, ::1] gM, double[:, :, :, ::1] cond, double[:, :, ::1] M):
    cdef Py_ssize_t B = M.shape[0], w = M.shape[1], k = M.shape[2]
    cdef Py_ssize_t b, t, s, r
    dq1_a = np.empty((B, k))
    dcond_a = np.empty((B, w - 1, k, k))
    cdef double[:, ::1] dq1 = dq1_a
    cdef double[:, :, :, ::1] dcond = dcond_a
    cdef double[::1] carry = np.empty(k), nxt = np.empty(k)
    cdef double acc
    with nogil:
        for b in range(B):
            for r in range(k):
                carry[r] = gM[b, w - 1, r]
            for t in range(w - 1, 0, -1):
                for s in range(k):
                    acc = 0.0
                    for r in range(k):
                        dcond[b, t - 1, s, r] = M[b, t - 1, s] * carry[r]
                        acc += cond[b, t - 1, s, r] * carry[r]
                    nxt[s] = gM[b, t - 1, s] + acc
                for s in range(k):
                    carry[s] = nxt[s]
            for r in range(k):
                dq1[b, r] = carry[r]
    return dq1_a, dcond_a


# ---------------------------------------------------------------------------
# Masked Gaussian log-likelihood table
# ---------------------------------------------------------------------------

def gauss_loglik_forward(double[:, :, ::1] x, double[:, :, ::1] m, double[:, ::1] mu,
                         double sigma):
    cdef Py_ssize_t B = x.shape[0], w = x.shape[1], d = x.shape[2], k = mu.shape[0]
    cdef Py_ssize_t b, t, c, i
    out_a = np.empty((B, w, k))
    cdef double[:, :, ::1] out = out_a
    cdef double cst = 0.5 * log(sigma / (2.0 * M_PI))
    cdef double sq, nobs, diff
    with nogil:
        for b in range(B):
            for t in range(w):
                nobs = 0.0
                for i in range(d):
                    nobs += m[b, t, i]
                for c in range(k):
                    sq = 0.0
                    for i in range(d):
                        if m[b, t, i] != 0.0:
                            diff = x[b, t, i] - mu[c, i]
                            sq += m[b, t, i] * diff * diff
                    out[b, t, c] = -0.5 * sigma * sq + nobs * cst
    return out_a


def gauss_loglik_backward(double[:, :, ::1] g, double[:, :, ::1] x, double[:, :, ::1] m,
                          double[:, ::1] mu, double sigma):
    cdef Py_ssize_t B = x.shape[0], w = x.shape[1], d = x.shape[2], k = mu.shape[0]
    cdef Py_ssize_t b, t, c, i
    dmu_a = np.zeros((k, d))
    cdef double[:, ::1] dmu = dmu_a
    with nogil:
        for b in range(B):
            for t in range(w):
                for c in range(k):
                    for i in range(d):
                        if m[b, t, i] != 0.0:
                            dmu[c, i] += sigma * g[b, t, c] * m[b, t, i] * (x[b, t, i] - mu[c, i])
    return dmu_a
