"""Recurrent cells and MLP heads built on the tape."""
import numpy as np

from . import tensor as T
from .fused import gru_cell
from .tensor import Parameter


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    def parameters(self):
        return [v for v in vars(self).values() if isinstance(v, Parameter)]

    def zero_(self):
        for p in self.parameters():
            p.data[...] = 0.0


class MLP(Module):
    """``tanh`` hidden layer followed by a linear read-out."""

    def __init__(self, in_dim, hidden_dim, out_dim, rng, prefix):
        self.W1 = Parameter(_uniform(rng, (in_dim, hidden_dim), in_dim), f"{prefix}.W1")
        self.b1 = Parameter(np.zeros(hidden_dim), f"{prefix}.b1")
        self.W2 = Parameter(_uniform(rng, (hidden_dim, out_dim), hidden_dim), f"{prefix}.W2")
        self.b2 = Parameter(np.zeros(out_dim), f"{prefix}.b2")

    def hidden(self, x):
        return T.tanh(T.affine(x, self.W1, self.b1))

    def __call__(self, x):
        return T.affine(self.hidden(x), self.W2, self.b2)


class GRUCell(Module):
    """GRU with reset/update/candidate gates packed as ``(in, 3H)`` blocks.

    ``fused=True`` routes the step through the compiled kernel; the composed
    path builds the same computation from primitive tape ops.
    """

    kind = "gru"

    def __init__(self, in_dim, hidden_dim, rng, prefix, fused=True):
        H = hidden_dim
        self.hidden_dim = H
        self.state_dim = H
        self.fused = fused
        self.Wx = Parameter(_uniform(rng, (in_dim, 3 * H), H), f"{prefix}.Wx")
        self.Wh = Parameter(_uniform(rng, (H, 3 * H), H), f"{prefix}.Wh")
        self.bx = Parameter(np.zeros(3 * H), f"{prefix}.bx")
        self.bh = Parameter(np.zeros(3 * H), f"{prefix}.bh")

    def initial_state(self, batch):
        return T.Tensor(np.zeros((batch, self.state_dim)))

    def output(self, state):
        return state

    def __call__(self, x, state):
        if self.fused:
            return gru_cell(x, state, self.Wx, self.Wh, self.bx, self.bh)
        return self.composed(x, state)

    def composed(self, x, h):
        H = self.hidden_dim
        gx = T.affine(x, self.Wx, self.bx)
        gh = T.affine(h, self.Wh, self.bh)
        r = T.sigmoid(gx[:, :H] + gh[:, :H])
        u = T.sigmoid(gx[:, H:2 * H] + gh[:, H:2 * H])
        n = T.tanh(gx[:, 2 * H:] + r * gh[:, 2 * H:])
        return (1.0 - u) * n + u * h


class LSTMCell(Module):
    """LSTM whose state is the concatenation ``[h, c]``; composed from primitives."""

    kind = "lstm"

    def __init__(self, in_dim, hidden_dim, rng, prefix, fused=True):
        H = hidden_dim
        self.hidden_dim = H
        self.state_dim = 2 * H
        self.Wx = Parameter(_uniform(rng, (in_dim, 4 * H), H), f"{prefix}.Wx")
        self.Wh = Parameter(_uniform(rng, (H, 4 * H), H), f"{prefix}.Wh")
        self.b = Parameter(np.zeros(4 * H), f"{prefix}.b")

    def initial_state(self, batch):
        return T.Tensor(np.zeros((batch, self.state_dim)))

    def output(self, state):
        return state[:, :self.hidden_dim]

    def __call__(self, x, state):
        H = self.hidden_dim
        h, c = state[:, :H], state[:, H:]
        g = T.matmul(x, self.Wx) + T.matmul(h, self.Wh) + self.b
        i = T.sigmoid(g[:, :H])
        f = T.sigmoid(g[:, H:2 * H])
        o = T.sigmoid(g[:, 2 * H:3 * H])
        cand = T.tanh(g[:, 3 * H:])
        c_new = f * c + i * cand
        h_new = o * T.tanh(c_new)
        return T.concat([h_new, c_new], axis=-1)


def make_cell(kind, in_dim, hidden_dim, rng, prefix, fused=True):
    if kind == "gru":
        return GRUCell(in_dim, hidden_dim, rng, prefix, fused=fused)
    if kind == "lstm":
        return LSTMCell(in_dim, hidden_dim, rng, prefix)
    raise ValueError(f"unknown recurrent cell {kind!r}")
