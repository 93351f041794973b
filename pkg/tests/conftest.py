import numpy as np
import pytest

from mixcast import _kernels
from mixcast.dataset import MtsSample
from mixcast.trainer import ModelParams, TrainConfig


@pytest.fixture(params=_kernels.available_backends())
def backend(request):
    previous = _kernels.BACKEND
    _kernels.use_backend(request.param)
    yield request.param
    _kernels.use_backend(previous)


def make_params(k=2, d=2, hidden=4, seed=0, gamma=0.3, sigma=1.0, **kw):
    cfg = TrainConfig(k=k, gamma=gamma, sigma=sigma, hidden_dim=hidden, seed=seed, **kw)
    return ModelParams(d, cfg)


def randomize(params, rng, scale=1.0):
    """Overwrite every weight with N(0, scale^2) draws; keep rho's diagonal at 1."""
    for p in params.parameters():
        p.data[...] = rng.normal(0.0, scale, size=p.data.shape)
    params.pre.pin_diagonal()
    return params


def zero_net(module):
    for p in module.parameters():
        p.data[...] = 0.0


def random_sample(rng, d, w, p_obs=1.0, sid="s"):
    values = rng.normal(size=(d, w))
    mask = (rng.random((d, w)) < p_obs).astype(np.int8)
    return MtsSample(sid, values, mask)


# acceptance criteria append (label, passed, detail) here; printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
