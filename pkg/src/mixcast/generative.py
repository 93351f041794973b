"""Generative side: recurrent cluster transitions and a dynamic Gaussian mixture.

A recurrent cell reads the cluster variable ``z_t`` (one-hot or a soft
simplex vector) and its head gives ``p(z_{t+1} | z_{1:t})``. Emissions come
from ``psi = (1 - gamma) * p(z_{t+1} | z_{1:t}) + gamma * p(mu)`` over a
shared set of isotropic Gaussian means.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffnum as dn
from .diffnum import Parameter
from .diffnum.nn import MLP, make_cell

MU_INIT_SD = 0.1


@dataclass
class MixtureBasis:
    means: np.ndarray
    basis_probs: np.ndarray
    sigma: float

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.basis_probs = np.asarray(self.basis_probs, dtype=np.float64)
        k = self.means.shape[0]
        if k < 1 or self.basis_probs.shape != (k,):
            raise ValueError("basis_probs must have one entry per mean")
        if (self.basis_probs < 0).any() or abs(self.basis_probs.sum() - 1.0) > 1e-9:
            raise ValueError("basis_probs must lie on the simplex")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def k(self):
        return self.means.shape[0]


@dataclass
class TransitionState:
    hidden: np.ndarray
    last_z: np.ndarray


def dynamic_mixture(trans, basis_probs, gamma):
    """``(1 - gamma) * trans + gamma * basis_probs``."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return (1.0 - gamma) * np.asarray(trans, float) + gamma * np.asarray(basis_probs, float)


def emit_loglik(x_t, mask_t, z, basis):
    """Masked isotropic Gaussian log-density of ``x_t`` under component ``z``."""
    mask_t = np.asarray(mask_t, dtype=bool)
    x = np.where(mask_t, np.nan_to_num(np.asarray(x_t, float)), 0.0)
    diff = np.where(mask_t, x - basis.means[z], 0.0)
    n_obs = int(mask_t.sum())
    if n_obs == 0:
        return 0.0
    return -0.5 * basis.sigma * float(diff @ diff) + n_obs * 0.5 * math.log(
        basis.sigma / (2.0 * math.pi))


class GenerativeNet:
    """Transition cell + softmax head, plus the trainable means."""

    def __init__(self, k, d, hidden_dim, rng, cell="gru", fused=True):
        self.k = k
        self.cell = make_cell(cell, k, hidden_dim, rng, "gen.cell", fused=fused)
        self.head = MLP(hidden_dim, hidden_dim, k, rng, "gen.head")
        self.mu = Parameter(rng.normal(0.0, MU_INIT_SD, size=(k, d)), "gen.mu")

    def parameters(self):
        return self.cell.parameters() + self.head.parameters() + [self.mu]

    def step(self, z, state):
        """Advance with input ``z`` (B, k); return new state and transition logits."""
        state = self.cell(z, state)
        return state, self.head(self.cell.output(state))

    def prior_logits(self, z_seq):
        """Transition logits for steps 2..w given inputs ``z_1..z_{w-1}``.

        ``z_seq`` is a list of (B, k) tensors; returns a list of (B, k) logits
        where entry ``t`` scores ``z_{t+2}``.
        """
        if not z_seq:
            return []
        state = self.cell.initial_state(z_seq[0].shape[0])
        out = []
        for z in z_seq:
            state, logits = self.step(z, state)
            out.append(logits)
        return out

    def filter_state(self, z_seq, batch):
        """Run the cell over ``z_seq`` (list of (B, k) arrays) from a zero state."""
        state = self.cell.initial_state(batch)
        for z in z_seq:
            state = self.cell(dn.Tensor(z), state)
        return state.data


def transition_step(state, net):
    """One transition: returns the next state and ``p(z_{t+1} | z_{1:t})``."""
    hidden = dn.Tensor(np.atleast_2d(state.hidden))
    z = dn.Tensor(np.atleast_2d(state.last_z))
    new_hidden, logits = net.step(z, hidden)
    probs = dn.softmax(logits).data
    squeeze = np.ndim(state.last_z) == 1
    return (TransitionState(new_hidden.data[0] if squeeze else new_hidden.data, state.last_z),
            probs[0] if squeeze else probs)


def forecast_rollout(state, net, basis, gamma, r):
    """Deterministic posterior-mean rollout for ``r`` steps.

    ``state`` may hold a batch (leading axis). ``gamma`` is a scalar or a
    per-row array. Returns ``(psi, xhat)`` with shapes (..., r, k) and
    (..., r, d).
    """
    if r < 1:
        raise ValueError("horizon must be >= 1")
    gamma = np.asarray(gamma, dtype=np.float64)
    if ((gamma < 0) | (gamma > 1)).any():
        raise ValueError("gamma must lie in [0, 1]")
    squeeze = np.ndim(state.last_z) == 1
    hidden = np.atleast_2d(state.hidden)
    last = np.atleast_2d(state.last_z)
    g = gamma.reshape(-1, 1) if gamma.ndim else gamma
    psis = []
    for _ in range(r):
        h_t, logits = net.step(dn.Tensor(last), dn.Tensor(hidden))
        trans = dn.softmax(logits).data
        psi = (1.0 - g) * trans + g * basis.basis_probs
        psis.append(psi)
        hidden, last = h_t.data, psi
    psi = np.stack(psis, axis=1)
    xhat = psi @ basis.means
    if squeeze:
        return psi[0], xhat[0]
    return psi, xhat


def sample_sequence(net, basis, gamma, w, seed, z1=None):
    """Ancestral draw of ``(z, z_tilde, x)``; ``x`` is (d, w).

    ``z`` is the transition path fed back into the cell as hard one-hots;
    ``z_tilde`` is drawn from the dynamic mixture and selects the emitting
    mean. The first emission draws from ``(1-gamma) onehot(z_1) + gamma p(mu)``.
    """
    if not basis.sigma > 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    k = basis.k
    eye = np.eye(k)
    z = np.empty(w, dtype=np.int64)
    zt = np.empty(w, dtype=np.int64)
    z[0] = rng.integers(k) if z1 is None else int(z1)
    zt[0] = rng.choice(k, p=dynamic_mixture(eye[z[0]], basis.basis_probs, gamma))
    hidden = net.cell.initial_state(1)
    for t in range(1, w):
        hidden, logits = net.step(dn.Tensor(eye[z[t - 1]][None]), hidden)
        trans = dn.softmax(logits).data[0]
        z[t] = rng.choice(k, p=trans / trans.sum())
        psi = dynamic_mixture(trans, basis.basis_probs, gamma)
        zt[t] = rng.choice(k, p=psi / psi.sum())
    noise = rng.standard_normal((w, basis.means.shape[1])) / math.sqrt(basis.sigma)
    x = basis.means[zt] + noise
    return z, zt, x.T
