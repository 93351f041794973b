"""Hand-built networks with known behaviour."""
import numpy as np

from conftest import zero_net


def make_alternator(net, sharp=50.0, gain=1000.0):
    """Set a k=2 transition net so that p(z_{t+1}) puts all mass on the other state.

    The update gate is pinned shut, so the new hidden state depends only on
    the input ``z``; the head maps it to saturated logits.
    """
    zero_net(net)
    cell, head = net.cell, net.head
    H = cell.hidden_dim
    cell.bx.data[H:2 * H] = -60.0              # update gate ~ 0: h' = n
    cell.Wx.data[0, 2 * H] = sharp             # n_0 = tanh(sharp * (z_0 - z_1))
    cell.Wx.data[1, 2 * H] = -sharp
    head.W1.data[0, 0] = 1.0
    head.W2.data[0] = [-gain, gain]            # positive n_0 -> state 1
    return net


def markov_rollout(psi0_state, A, basis_probs, gamma, means, r):
    """Closed-form rollout of a first-order chain from a one-hot start state."""
    psi = np.eye(A.shape[0])[psi0_state]
    out_psi, out_x = [], []
    for _ in range(r):
        psi = (1.0 - gamma) * psi @ A + gamma * basis_probs
        out_psi.append(psi)
        out_x.append(psi @ means)
    return np.array(out_psi), np.array(out_x)


def brute_force_marginals(q1, cond):
    """q(z_t) by summing the joint over every path; ``cond`` is (w-1, k, k)."""
    import itertools
    k = len(q1)
    w = len(cond) + 1
    out = np.zeros((w, k))
    for path in itertools.product(range(k), repeat=w):
        p = q1[path[0]]
        for t in range(1, w):
            p *= cond[t - 1][path[t - 1], path[t]]
        for t, z in enumerate(path):
            out[t, z] += p
    return out


def make_sticky(net, gain=1000.0, sharp=50.0):
    """k=2 transition net that keeps the current state with probability ~1."""
    make_alternator(net, sharp=sharp, gain=gain)
    net.head.W2.data[0] = [gain, -gain]
    return net


def pin_inference(inf, logits):
    """Make every inference conditional equal softmax(logits), whatever the input."""
    zero_net(inf)
    inf.head.b2.data[...] = logits
    return inf
