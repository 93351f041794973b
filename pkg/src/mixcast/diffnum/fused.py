"""Tape nodes backed by the fused kernels in :mod:`mixcast._kernels`.

Each op computes its forward value with the active kernel backend and records
the matching hand-written adjoint. They are checked against compositions of
primitive ops and against finite differences in the test suite.
"""
import numpy as np

from .. import _kernels
from .tensor import as_tensor, make_node


def _c(a):
    out = np.ascontiguousarray(a, dtype=np.float64)
    return out if out.flags.writeable else out.copy()


def gru_cell(x, h, Wx, Wh, bx, bh):
    """One GRU step on a batch: ``x`` (B, I), ``h`` (B, H)."""
    x, h = as_tensor(x), as_tensor(h)
    kb = _kernels.backend
    xd, hd, Wxd, Whd = _c(x.data), _c(h.data), _c(Wx.data), _c(Wh.data)
    h_new, r, u, n, ghn = kb.gru_forward(xd, hd, Wxd, Whd, _c(bx.data), _c(bh.data))

    def back(g):
        dx, dh, dWx, dWh, dbx, dbh = kb.gru_backward(_c(g), xd, hd, Wxd, Whd, r, u, n, ghn)
        return dx, dh, dWx, dWh, dbx, dbh

    return make_node(np.asarray(h_new), (x, h, Wx, Wh, bx, bh), back, "gru_cell")


def preimpute(x, m, times, alpha, rho):
    """Dense (B, d, w) output of the kernel smoothing + cross-variable merge.

    ``x``, ``m`` and ``times`` are constants; ``alpha`` (positive bandwidths) and
    ``rho`` are tensors.
    """
    kb = _kernels.backend
    xd, md, td = _c(x), _c(m), _c(times)
    ad, rd = _c(alpha.data), _c(rho.data)
    dense, _, _ = kb.preimpute_forward(xd, md, td, ad, rd)

    def back(g):
        return kb.preimpute_backward(_c(g), xd, md, td, ad, rd)

    return make_node(np.asarray(dense), (alpha, rho), back, "preimpute")


def marginals(q1, cond):
    """Chain marginals (B, w, k) from ``q1`` (B, k) and ``cond`` (B, w-1, k, k)."""
    q1, cond = as_tensor(q1), as_tensor(cond)
    kb = _kernels.backend
    cd = _c(cond.data)
    M = np.asarray(kb.marginals_forward(_c(q1.data), cd))

    def back(g):
        return kb.marginals_backward(_c(g), cd, M)

    return make_node(M, (q1, cond), back, "marginals")


def gauss_loglik(x, m, mu, sigma):
    """Masked isotropic log N(x_t | mu_r, I/sigma) table, shape (B, w, k)."""
    kb = _kernels.backend
    xd, md, mud = _c(x), _c(m), _c(mu.data)
    out = np.asarray(kb.gauss_loglik_forward(xd, md, mud, float(sigma)))

    def back(g):
        return (np.asarray(kb.gauss_loglik_backward(_c(g), xd, md, mud, float(sigma))),)

    return make_node(out, (mu,), back, "gauss_loglik")
