"""Compiled and numpy kernels must agree; fused tape nodes must match composed ones."""
import numpy as np
import pytest

from mixcast import _kernels
from mixcast.diffnum import Tensor, fd_check, tsum, square
from mixcast.diffnum.fused import gauss_loglik, marginals, preimpute
from mixcast.diffnum.nn import GRUCell
from mixcast.diffnum import Parameter

needs_compiled = pytest.mark.skipif(
    "cython" not in _kernels.available_backends(), reason="compiled kernels not built")


def _inputs(rng, B=3, d=3, w=5, k=3, H=4):
    x = rng.normal(size=(B, d, w))
    m = (rng.random((B, d, w)) < 0.6).astype(float)
    m[0, 1] = 0.0  # one fully unobserved variable
    return {
        "x": x * m, "m": m, "times": np.tile(np.arange(1.0, w + 1), (B, 1)),
        "alpha": rng.uniform(0.2, 2.0, d), "rho": rng.normal(size=(d, d)),
        "q1": rng.dirichlet(np.ones(k), size=B), "cond": rng.dirichlet(np.ones(k), size=(B, w - 1, k)),
        "xg": rng.normal(size=(B, H)), "h": rng.normal(size=(B, H)),
        "Wx": rng.normal(size=(H, 3 * H)), "Wh": rng.normal(size=(H, 3 * H)),
        "bx": rng.normal(size=3 * H), "bh": rng.normal(size=3 * H),
        "xt": rng.normal(size=(B, w, d)), "mt": (rng.random((B, w, d)) < 0.7).astype(float),
        "mu": rng.normal(size=(k, d)),
    }


def _run_all(kb, a, rng):
    out = {}
    out["gru"] = kb.gru_forward(a["xg"], a["h"], a["Wx"], a["Wh"], a["bx"], a["bh"])
    g = rng.normal(size=a["h"].shape)
    f = out["gru"]
    out["gru_b"] = kb.gru_backward(g, a["xg"], a["h"], a["Wx"], a["Wh"], *[np.asarray(v) for v in f[1:]])
    out["pre"] = kb.preimpute_forward(a["x"], a["m"], a["times"], a["alpha"], a["rho"])
    gp = rng.normal(size=a["x"].shape)
    out["pre_b"] = kb.preimpute_backward(gp, a["x"], a["m"], a["times"], a["alpha"], a["rho"])
    M = kb.marginals_forward(a["q1"], a["cond"])
    out["marg"] = (M,)
    out["marg_b"] = kb.marginals_backward(rng.normal(size=np.shape(M)), a["cond"], np.asarray(M))
    out["ll"] = (kb.gauss_loglik_forward(a["xt"], a["mt"], a["mu"], 2.5),)
    out["ll_b"] = (kb.gauss_loglik_backward(rng.normal(size=np.shape(out["ll"][0])),
                                            a["xt"], a["mt"], a["mu"], 2.5),)
    return out


@needs_compiled
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    a = _inputs(np.random.default_rng(seed))
    ref = _run_all(_kernels.get_backend("numpy"), a, np.random.default_rng(100 + seed))
    fast = _run_all(_kernels.get_backend("cython"), a, np.random.default_rng(100 + seed))
    for key in ref:
        for r, c in zip(ref[key], fast[key]):
            np.testing.assert_allclose(np.asarray(c), np.asarray(r), rtol=1e-11, atol=1e-12,
                                       err_msg=key)


def test_fused_gru_matches_composed(backend):
    rng = np.random.default_rng(3)
    cell = GRUCell(3, 5, rng, "g")
    x = Tensor(rng.normal(size=(4, 3)))
    h = Tensor(rng.normal(size=(4, 5)))
    np.testing.assert_allclose(cell(x, h).data, cell.composed(x, h).data, atol=1e-14)
    weights = rng.normal(size=(4, 5))
    grads = []
    for fn in (cell, cell.composed):
        for p in cell.parameters():
            p.zero_grad()
        tsum(fn(x, h) * weights).backward()
        grads.append([p.grad.copy() for p in cell.parameters()])
    for a, b in zip(*grads):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_fused_nodes_pass_fd(backend):
    rng = np.random.default_rng(4)
    a = _inputs(rng)
    alpha = Parameter(a["alpha"], "alpha")
    rho = Parameter(a["rho"], "rho")
    W = rng.normal(size=a["x"].shape)
    rep = fd_check(lambda: tsum(preimpute(a["x"], a["m"], a["times"], alpha, rho) * W), [alpha, rho])
    assert rep.passed, str(rep)

    q1 = Parameter(a["q1"], "q1")
    cond = Parameter(a["cond"], "cond")
    G = rng.normal(size=(3, 5, 3))
    rep = fd_check(lambda: tsum(marginals(q1, cond) * G), [q1, cond])
    assert rep.passed, str(rep)

    mu = Parameter(a["mu"], "mu")
    rep = fd_check(lambda: tsum(square(gauss_loglik(a["xt"] * a["mt"], a["mt"], mu, 2.5))), [mu])
    assert rep.passed, str(rep)


def test_backend_switch_roundtrip():
    before = _kernels.BACKEND
    _kernels.use_backend("numpy")
    assert _kernels.backend.NAME == "numpy"
    _kernels.use_backend(before)
    assert _kernels.BACKEND == before
    with pytest.raises(ValueError):
        _kernels.get_backend("fortran")
