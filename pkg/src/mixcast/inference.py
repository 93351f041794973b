"""Structured inference network over cluster sequences.

A recurrent cell reads the pre-imputed series; a head over ``[h_t; z_{t-1}]``
gives ``q(z_t | x_{1:t}, z_{t-1})`` with ``z_0 = 0``. Evaluating the head at
every one-hot ``z_{t-1}`` yields a (k, k) conditional table per step, whose
chain marginals are exact. Relaxed ancestral samples run alongside for the
transition KL terms. A scalar sigmoid head gives the gate ``gamma_t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffnum as dn
from .diffnum.fused import marginals as _fused_marginals
from .diffnum.nn import MLP, make_cell

INFER_INPUTS = ("aligned", "lagged")


def gumbel_softmax(logits, tau, rng=None, noise=None):
    """Relaxed one-hot ``softmax((logits + g) / tau)`` with ``g ~ Gumbel(0, 1)``.

    Pass ``noise`` to fix ``g`` (zeros give the noise-free path).
    """
    if not tau > 0:
        raise ValueError("temperature must be positive")
    logits = dn.as_tensor(logits)
    if noise is None:
        if rng is None:
            raise ValueError("need rng or noise")
        noise = rng.gumbel(size=logits.shape)
    return dn.softmax((logits + np.asarray(noise, float)) * (1.0 / tau))


def marginals(q1, cond):
    """Chain marginals (w, k) from ``q1`` (k,) and ``cond`` (w-1, k, k)."""
    q1 = np.asarray(q1, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    out = [q1]
    for table in cond:
        out.append(out[-1] @ table)
    return np.stack(out)


def estimate_basis_probs(memberships):
    """Average membership rows (n, k) into basis probabilities."""
    rows = np.asarray(memberships, dtype=np.float64)
    rows = rows.reshape(-1, rows.shape[-1])
    if rows.shape[0] == 0:
        raise ValueError("cannot estimate basis probabilities from an empty batch")
    return rows.mean(axis=0)


@dataclass
class CategoricalSeq:
    """Per-sample inference output; ``cond[t]`` conditions step t+2 on step t+1."""

    q1: np.ndarray
    cond: np.ndarray
    marginals: np.ndarray
    samples: np.ndarray
    gate: np.ndarray = field(default=None)
    hidden: np.ndarray = field(default=None)


@dataclass
class InferenceTrace:
    """Batched tape outputs of one inference pass."""

    hidden: list
    q1_logits: dn.Tensor
    table_logits: list
    gate: dn.Tensor
    sample_paths: list
    sample_logits: list

    def q1(self):
        return dn.softmax(self.q1_logits)

    def cond(self):
        """(B, w-1, k, k) conditional tables as one tensor, or None for w=1."""
        if not self.table_logits:
            return None
        return dn.stack([dn.softmax(t) for t in self.table_logits], axis=1)

    def marginals(self):
        """(B, w, k) marginal tensor."""
        q1 = self.q1()
        cond = self.cond()
        if cond is None:
            return dn.reshape(q1, (q1.shape[0], 1, q1.shape[1]))
        return _fused_marginals(q1, cond)


class InferenceNet:
    def __init__(self, k, d, hidden_dim, rng, cell="gru", infer_input="aligned", fused=True):
        if infer_input not in INFER_INPUTS:
            raise ValueError(f"infer_input must be one of {INFER_INPUTS}")
        self.k = k
        self.hidden_dim = hidden_dim
        self.infer_input = infer_input
        self.cell = make_cell(cell, d, hidden_dim, rng, "inf.cell", fused=fused)
        self.head = MLP(hidden_dim + k, hidden_dim, k, rng, "inf.head")
        self.gate = MLP(hidden_dim, hidden_dim, 1, rng, "inf.gate")

    def parameters(self):
        return self.cell.parameters() + self.head.parameters() + self.gate.parameters()

    def hidden_states(self, dense):
        """Cell outputs for every step of ``dense`` (B, w, d)."""
        B, w, d = dense.shape
        state = self.cell.initial_state(B)
        out = []
        for t in range(w):
            if self.infer_input == "aligned":
                x_in = dense[:, t, :]
            else:
                x_in = dense[:, t - 1, :] if t > 0 else dn.Tensor(np.zeros((B, d)))
            state = self.cell(x_in, state)
            out.append(self.cell.output(state))
        return out

    def run(self, dense, tau, rng=None, noise=None, n_samples=1):
        """Full pass over ``dense`` (B, w, d).

        ``noise`` (n_samples, w, B, k) fixes the Gumbel draws; otherwise they
        come from ``rng``.
        """
        H = self.hidden_dim
        W1h = self.head.W1[:H]
        W1z = self.head.W1[H:]
        hidden = self.hidden_states(dense)
        B = dense.shape[0]
        pre = [dn.affine(h, W1h, self.head.b1) for h in hidden]

        q1_logits = dn.affine(dn.tanh(pre[0]), self.head.W2, self.head.b2)
        tables = []
        for p in pre[1:]:
            act = dn.tanh(dn.reshape(p, (B, 1, p.shape[1])) + W1z)
            tables.append(dn.matmul(act, self.head.W2) + self.head.b2)
        gate = dn.stack([dn.sigmoid(self.gate(h))[:, 0] for h in hidden], axis=1)

        paths, path_logits = [], []
        for s in range(n_samples):
            z_prev = None
            zs, ls = [], []
            for t, p in enumerate(pre):
                if z_prev is None:
                    logits = q1_logits
                else:
                    act = dn.tanh(p + dn.matmul(z_prev, W1z))
                    logits = dn.affine(act, self.head.W2, self.head.b2)
                g = None if noise is None else noise[s][t]
                z_prev = gumbel_softmax(logits, tau, rng=rng, noise=g)
                zs.append(z_prev)
                ls.append(logits)
            paths.append(zs)
            path_logits.append(ls)
        return InferenceTrace(hidden, q1_logits, tables, gate, paths, path_logits)


def infer_forward(dense, net, temperature, seed):
    """Inference for one pre-imputed sample; ``dense`` is a (d, w) DenseMts or array."""
    values = getattr(dense, "values", dense)
    x = dn.Tensor(np.asarray(values, float).T[None])
    trace = net.run(x, temperature, rng=np.random.default_rng(seed))
    k = net.k
    cond = trace.cond()
    return CategoricalSeq(
        q1=trace.q1().data[0],
        cond=np.zeros((0, k, k)) if cond is None else cond.data[0],
        marginals=trace.marginals().data[0],
        samples=np.stack([z.data[0] for z in trace.sample_paths[0]]),
        gate=trace.gate.data[0],
        hidden=np.stack([h.data[0] for h in trace.hidden]),
    )
