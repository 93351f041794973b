"""Pure numpy implementations of the fused kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Array conventions (all float64, C-contiguous):

* GRU: ``x`` (B, I), ``h`` (B, H), ``Wx`` (I, 3H), ``Wh`` (H, 3H), gate order
  reset / update / candidate.
* pre-imputation: ``x`` and ``m`` are (B, d, w) with ``x`` zero-filled where
  ``m == 0``; ``times`` is (B, w).
* marginals: ``q1`` (B, k), ``cond`` (B, w-1, k, k) with ``cond[b, t, s, r]``
  the probability of state ``r`` at step ``t+2`` given state ``s`` at ``t+1``.
* Gaussian log-likelihood table: ``x``/``m`` (B, w, d), ``mu`` (k, d).
"""
import math

import numpy as np

NAME = "numpy"


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


# ---------------------------------------------------------------------------
# GRU cell
# ---------------------------------------------------------------------------

def gru_forward(x, h, Wx, Wh, bx, bh):
    H = h.shape[1]
    gx = x @ Wx + bx
    gh = h @ Wh + bh
    r = _sigmoid(gx[:, :H] + gh[:, :H])
    u = _sigmoid(gx[:, H:2 * H] + gh[:, H:2 * H])
    ghn = gh[:, 2 * H:]
    n = np.tanh(gx[:, 2 * H:] + r * ghn)
    h_new = (1.0 - u) * n + u * h
    return h_new, r, u, n, np.ascontiguousarray(ghn)


def gru_backward(dh_new, x, h, Wx, Wh, r, u, n, ghn):
    dn = dh_new * (1.0 - u)
    du = dh_new * (h - n)
    dh = dh_new * u
    dan = dn * (1.0 - n * n)
    dr = dan * ghn
    dar = dr * r * (1.0 - r)
    dau = du * u * (1.0 - u)
    dgx = np.concatenate([dar, dau, dan], axis=1)
    dgh = np.concatenate([dar, dau, dan * r], axis=1)
    dx = dgx @ Wx.T
    dh = dh + dgh @ Wh.T
    return dx, dh, x.T @ dgx, h.T @ dgh, dgx.sum(axis=0), dgh.sum(axis=0)


# ---------------------------------------------------------------------------
# Kernel pre-imputation
# ---------------------------------------------------------------------------

def _preimpute_pieces(x, m, times, alpha, rho):
    D = (times[:, :, None] - times[:, None, :]) ** 2
    K = np.exp(-alpha[None, :, None, None] * D[:, None, :, :])
    L = np.einsum("bit,bjst->bijs", m, K)
    S = np.einsum("bjst,bjt->bjs", K, m * x)
    d = alpha.shape[0]
    idx = np.arange(d)
    Ljj = L[:, idx, idx, :]
    valid = Ljj > 0
    safe_ljj = np.where(valid, Ljj, 1.0)
    xbar = np.where(valid, S / safe_ljj, 0.0)
    N = np.einsum("ij,bijs,bjs->bis", rho, L, xbar)
    den = L.sum(axis=2)
    has_den = den > 0
    safe_den = np.where(has_den, den, 1.0)
    imp = np.where(has_den, N / safe_den, 0.0)
    return D, K, L, Ljj, valid, safe_ljj, xbar, den, has_den, safe_den, imp


def preimpute_forward(x, m, times, alpha, rho):
    """Return ``(dense, xbar, lam)``; ``lam`` is each variable's own intensity."""
    _, _, _, Ljj, _, _, xbar, _, _, _, imp = _preimpute_pieces(x, m, times, alpha, rho)
    dense = np.where(m > 0, x, imp)
    return dense, xbar, Ljj


def preimpute_backward(g, x, m, times, alpha, rho):
    """Gradients of ``sum(g * dense)`` w.r.t. ``alpha`` and ``rho``."""
    D, K, L, Ljj, valid, safe_ljj, xbar, den, has_den, safe_den, imp = _preimpute_pieces(
        x, m, times, alpha, rho
    )
    gm = np.where((m == 0) & has_den, g, 0.0)
    gN = gm / safe_den
    gden = -gm * imp / safe_den
    drho = np.einsum("bis,bijs,bjs->ij", gN, L, xbar)
    dL = np.einsum("bis,ij,bjs->bijs", gN, rho, xbar) + gden[:, :, None, :]
    dxbar = np.einsum("bis,ij,bijs->bjs", gN, rho, L)
    dS = np.where(valid, dxbar / safe_ljj, 0.0)
    dLjj = np.where(valid, -dxbar * xbar / safe_ljj, 0.0)
    idx = np.arange(alpha.shape[0])
    dL[:, idx, idx, :] += dLjj
    dK = np.einsum("bijs,bit->bjst", dL, m) + dS[:, :, :, None] * (m * x)[:, :, None, :]
    dalpha = -np.einsum("bjst,bst,bjst->j", dK, D, K)
    return dalpha, drho


# ---------------------------------------------------------------------------
# Marginal recursion over a chain of conditional tables
# ---------------------------------------------------------------------------

def marginals_forward(q1, cond):
    B, k = q1.shape
    w = cond.shape[1] + 1
    out = np.empty((B, w, k))
    out[:, 0] = q1
    for t in range(1, w):
        out[:, t] = np.einsum("bs,bsr->br", out[:, t - 1], cond[:, t - 1])
    return out


def marginals_backward(gM, cond, M):
    w = M.shape[1]
    dcond = np.empty_like(cond)
    carry = gM[:, w - 1].copy()
    for t in range(w - 1, 0, -1):
        dcond[:, t - 1] = M[:, t - 1, :, None] * carry[:, None, :]
        carry = gM[:, t - 1] + np.einsum("bsr,br->bs", cond[:, t - 1], carry)
    return carry, dcond


# ---------------------------------------------------------------------------
# Masked isotropic Gaussian log-likelihood table
# ---------------------------------------------------------------------------

def gauss_loglik_forward(x, m, mu, sigma):
    diff = x[:, :, None, :] - mu[None, None, :, :]
    sq = np.einsum("btd,btkd->btk", m, diff * diff)
    n_obs = m.sum(axis=2)
    return -0.5 * sigma * sq + n_obs[:, :, None] * (0.5 * math.log(sigma / (2.0 * math.pi)))


def gauss_loglik_backward(g, x, m, mu, sigma):
    diff = x[:, :, None, :] - mu[None, None, :, :]
    return sigma * np.einsum("btk,btd,btkd->kd", g, m, diff)
