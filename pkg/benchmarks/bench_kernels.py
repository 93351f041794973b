"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Each kernel runs at a training-sized shape (batch 50, window 20, d=2, k=3,
hidden 16). The last row times one full loss + backward pass, which is what
a training step costs.
"""
import argparse
import timeit

import numpy as np

from mixcast import _kernels
from mixcast.dataset import synthesize
from mixcast.trainer import Batch, ModelParams, TrainConfig, elbo

B, W, D, K, H = 50, 20, 2, 3, 16


def kernel_cases(kb, rng):
    x = rng.normal(size=(B, D, W))
    m = (rng.random((B, D, W)) < 0.7).astype(np.float64)
    times = np.tile(np.arange(1.0, W + 1), (B, 1))
    alpha, rho = np.ones(D), np.eye(D) + 0.1
    xg, hg = rng.normal(size=(B, K)), rng.normal(size=(B, H))
    Wx, Wh = rng.normal(size=(K, 3 * H)) * 0.3, rng.normal(size=(H, 3 * H)) * 0.3
    bx, bh = np.zeros(3 * H), np.zeros(3 * H)
    q1 = rng.dirichlet(np.ones(K), size=B)
    cond = rng.dirichlet(np.ones(K), size=(B, W - 1, K))
    xs, ms, mu = rng.normal(size=(B, W, D)), np.ones((B, W, D)), rng.normal(size=(K, D))

    _, r, u, n, ghn = kb.gru_forward(xg, hg, Wx, Wh, bx, bh)
    M = np.asarray(kb.marginals_forward(q1, cond))
    g_gru, g_pre, g_M = np.ones((B, H)), np.ones((B, D, W)), np.ones((B, W, K))
    return {
        "gru forward": lambda: kb.gru_forward(xg, hg, Wx, Wh, bx, bh),
        "gru backward": lambda: kb.gru_backward(g_gru, xg, hg, Wx, Wh, r, u, n, ghn),
        "preimpute forward": lambda: kb.preimpute_forward(x, m, times, alpha, rho),
        "preimpute backward": lambda: kb.preimpute_backward(g_pre, x, m, times, alpha, rho),
        "marginals forward": lambda: kb.marginals_forward(q1, cond),
        "marginals backward": lambda: kb.marginals_backward(g_M, cond, M),
        "gauss loglik forward": lambda: kb.gauss_loglik_forward(xs, ms, mu, 2.0),
        "gauss loglik backward": lambda: kb.gauss_loglik_backward(np.ones((B, W, K)), xs, ms, mu, 2.0),
    }


def step_case():
    samples, _ = synthesize(K, D, W, B, 100.0, 0.01, seed=0, delta=0.3)
    batch = Batch.from_samples(samples)
    params = ModelParams(D, TrainConfig(k=K, hidden_dim=H, sigma=2.0))

    def step():
        elbo(batch, params, seed=0).backward()
    return step


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = _kernels.available_backends()
    rng = np.random.default_rng(0)
    rows = {}
    for name in backends:
        for label, fn in kernel_cases(_kernels.get_backend(name), rng).items():
            rows.setdefault(label, {})[name] = best_of(fn, args.repeat, 50)
        _kernels.use_backend(name)
        rows.setdefault("loss + backward step", {})[name] = best_of(step_case(), args.repeat, 3)
    _kernels.use_backend(backends[0])

    print(f"{'case':<24}" + "".join(f"{b:>14}" for b in backends) +
          ("     speed-up" if len(backends) > 1 else ""))
    for label, times in rows.items():
        line = f"{label:<24}" + "".join(f"{times[b] * 1e6:>11.1f} us" for b in backends)
        if len(backends) > 1:
            line += f"{times['numpy'] / times['cython']:>12.1f}x"
        print(line)


if __name__ == "__main__":
    main()
