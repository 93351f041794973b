"""Variational objective, exact-enumeration oracle, optimisation and checkpoints."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import diffnum as dn
from ._io import atomic_write_text, derive_seed
from .diffnum import NonFiniteError
from .diffnum.fused import gauss_loglik
from .generative import GenerativeNet, MixtureBasis
from .inference import InferenceNet
from .preimpute import PreImputeLayer

GATE = "gate"
CHECKPOINT_VERSION = "v1"
MAX_PATHS = 4096


class DivergenceError(RuntimeError):
    def __init__(self, epoch, batch, detail=""):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}"
                         + (f": {detail}" if detail else ""))
        self.epoch = epoch
        self.batch = batch


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class GuardError(ValueError):
    pass


@dataclass
class TrainConfig:
    k: int = 3
    gamma: object = 0.01
    sigma: float = 1.0
    hidden_dim: int = 16
    window: int = 20
    horizon: int = 5
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    temperature_start: float = 1.0
    temperature_end: float = 0.3
    patience: int = 10
    samples: int = 1
    cell: str = "gru"
    infer_input: str = "aligned"

    def __post_init__(self):
        self.validate()

    @property
    def gated(self):
        return self.gamma == GATE

    def validate(self):
        if isinstance(self.gamma, str):
            if self.gamma != GATE:
                raise ValueError(f"gamma must be a number in [0, 1] or {GATE!r}")
        elif not 0.0 <= float(self.gamma) <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        checks = [
            (1 <= self.k <= 200, "k must lie in [1, 200]"),
            (self.sigma > 0, "sigma must be positive"),
            (self.hidden_dim >= 1, "hidden_dim must be >= 1"),
            (self.window >= 1, "window must be >= 1"),
            (self.horizon >= 1, "horizon must be >= 1"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.temperature_start > 0 and self.temperature_end > 0,
             "temperatures must be positive"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.samples >= 1, "samples must be >= 1"),
            (self.cell in ("gru", "lstm"), "cell must be 'gru' or 'lstm'"),
            (self.infer_input in ("aligned", "lagged"), "infer_input must be aligned or lagged"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def temperature(self, epoch):
        if self.epochs <= 1:
            return self.temperature_start
        frac = min(epoch / (self.epochs - 1), 1.0)
        return self.temperature_start + frac * (self.temperature_end - self.temperature_start)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


class ModelParams:
    """Every trainable piece plus the estimated basis probabilities."""

    def __init__(self, d, config):
        self.d = d
        self.config = config
        rng = np.random.default_rng(derive_seed(config.seed, "init"))
        self.pre = PreImputeLayer(d)
        self.gen = GenerativeNet(config.k, d, config.hidden_dim, rng, cell=config.cell)
        self.inf = InferenceNet(config.k, d, config.hidden_dim, rng, cell=config.cell,
                                infer_input=config.infer_input)
        self.basis_probs = np.full(config.k, 1.0 / config.k)

    def parameters(self):
        return self.pre.parameters() + self.gen.parameters() + self.inf.parameters()

    def named(self):
        return {p.name: p for p in self.parameters()}

    @property
    def basis(self):
        return MixtureBasis(self.gen.mu.data, self.basis_probs, self.config.sigma)

    def snapshot(self):
        return {p.name: p.data.copy() for p in self.parameters()}, self.basis_probs.copy()

    def restore(self, snap):
        arrays, probs = snap
        for p in self.parameters():
            p.data[...] = arrays[p.name]
        self.basis_probs = probs.copy()

    def equals(self, other):
        a, b = self.named(), other.named()
        return (a.keys() == b.keys()
                and all(np.array_equal(a[n].data, b[n].data) for n in a)
                and np.array_equal(self.basis_probs, other.basis_probs))


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    x: np.ndarray      # (B, w, d) zero-filled
    m: np.ndarray      # (B, w, d)
    times: np.ndarray  # (B, w)

    @classmethod
    def from_samples(cls, samples):
        d, w = samples[0].d, samples[0].w
        if any(s.d != d or s.w != w for s in samples):
            raise ValueError("all samples in a batch must share d and w")
        x = np.stack([s.filled().T for s in samples])
        m = np.stack([s.mask.T for s in samples]).astype(np.float64)
        times = np.stack([s.ref_times for s in samples])
        return cls(x, m, times)

    @property
    def size(self):
        return self.x.shape[0]


def _as_batch(data):
    if isinstance(data, Batch):
        return data
    if hasattr(data, "mask"):
        return Batch.from_samples([data])
    return Batch.from_samples(list(data))


def dense_inputs(params, batch):
    """Pre-imputed (B, w, d) tensor."""
    xt = np.ascontiguousarray(batch.x.transpose(0, 2, 1))
    mt = np.ascontiguousarray(batch.m.transpose(0, 2, 1))
    return dn.transpose(params.pre(xt, mt, batch.times), (0, 2, 1))


def gamma_terms(params, trace, B, w):
    """(B, w) gamma tensor or constant array."""
    if params.config.gated:
        return trace.gate
    return np.full((B, w), float(params.config.gamma))


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

def _kl_rows(logq, logp):
    return dn.tsum(dn.exp(logq) * (logq - logp), axis=-1)


def _sampled_transition_kl(params, trace):
    total = None
    for zs, ls in zip(trace.sample_paths, trace.sample_logits):
        prior = params.gen.prior_logits(zs[:-1])
        for logits_q, logits_p in zip(ls[1:], prior):
            kl = _kl_rows(dn.log_softmax(logits_q), dn.log_softmax(logits_p))
            total = kl if total is None else total + kl
    if total is None:
        return 0.0
    return total * (1.0 / len(trace.sample_paths))


def _enumerated_transition_kl(params, trace, B):
    """Exact ``sum_t E_q(z_{1:t-1}) KL(q(z_t|z_{t-1}) || p(z_t|z_{1:t-1}))``."""
    w = len(trace.hidden)
    if w == 1:
        return 0.0
    k = params.config.k
    paths = np.array(list(itertools.product(range(k), repeat=w - 1)), dtype=np.int64)
    P = len(paths)
    if P > MAX_PATHS:
        raise GuardError(f"{P} paths exceed the enumeration guard of {MAX_PATHS}")
    b_idx = np.repeat(np.arange(B), P)
    p_idx = np.tile(np.arange(P), B)
    eye = np.eye(k)
    z_in = [dn.Tensor(eye[paths[p_idx, t]]) for t in range(w - 1)]
    prior = params.gen.prior_logits(z_in)
    logq1 = dn.log_softmax(trace.q1_logits)
    log_tables = [dn.log_softmax(tl) for tl in trace.table_logits]
    weight_log = logq1[b_idx, paths[p_idx, 0]]
    for j in range(1, w - 1):
        weight_log = weight_log + log_tables[j - 1][b_idx, paths[p_idx, j - 1], paths[p_idx, j]]
    total = None
    for t in range(1, w):
        logq_rows = log_tables[t - 1][b_idx, paths[p_idx, t - 1]]
        kl = _kl_rows(logq_rows, dn.log_softmax(prior[t - 1]))
        total = kl if total is None else total + kl
    weighted = dn.exp(weight_log) * total
    return dn.tsum(dn.reshape(weighted, (B, P)), axis=1)


def elbo_terms(params, data, tau=1.0, rng=None, noise=None, basis_probs=None, exact=False):
    """Per-sample ELBO (B,) tensor plus the inference trace.

    ``basis_probs`` overrides the batch estimate of ``p(mu)``; by default it
    is the mean marginal over all B*w steps of the batch, held constant.
    """
    cfg = params.config
    batch = _as_batch(data)
    B, w, _ = batch.x.shape
    dense = dense_inputs(params, batch)
    n_samples = 0 if exact else cfg.samples
    trace = params.inf.run(dense, tau, rng=rng, noise=noise, n_samples=max(n_samples, 1))
    M = trace.marginals()
    p = M.data.reshape(-1, cfg.k).mean(axis=0) if basis_probs is None else np.asarray(
        basis_probs, float)
    LL = gauss_loglik(batch.x, batch.m, params.gen.mu, cfg.sigma)
    gamma = gamma_terms(params, trace, B, w)
    recon = dn.tsum(M * LL, axis=-1)
    base = dn.tsum(LL * p, axis=-1)
    fit = dn.tsum((1.0 - gamma) * recon + gamma * base, axis=1)
    logq1 = dn.log_softmax(trace.q1_logits)
    kl1 = dn.tsum(dn.exp(logq1) * (logq1 + math.log(cfg.k)), axis=-1)
    if exact:
        klt = _enumerated_transition_kl(params, trace, B)
    else:
        klt = _sampled_transition_kl(params, trace)
    return fit - kl1 - klt, trace, p


def elbo(data, params, config=None, seed=0, tau=None, noise=None, basis_probs=None,
         exact=False):
    """Mean negative ELBO over ``data`` (a sample, list of samples or Batch)."""
    if config is not None and config is not params.config:
        params.config = config
    tau = params.config.temperature_start if tau is None else tau
    rng = np.random.default_rng(derive_seed(seed, "gumbel"))
    values, _, _ = elbo_terms(params, data, tau, rng=rng, noise=noise,
                              basis_probs=basis_probs, exact=exact)
    return -dn.mean(values)


# ---------------------------------------------------------------------------
# Exact marginal likelihood by path enumeration
# ---------------------------------------------------------------------------

def _gauss_logpdf(x, m, means, sigma):
    """log N(x | means[..., :], I/sigma) over observed dims; ``means`` (..., d)."""
    diff = np.where(m > 0, x - means, 0.0)
    n_obs = m.sum()
    return -0.5 * sigma * (diff * diff).sum(axis=-1) + n_obs * 0.5 * math.log(
        sigma / (2.0 * math.pi))


def _logsumexp(a, axis=None):
    a = np.asarray(a, dtype=np.float64)
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    return np.squeeze(out, axis=axis) if axis is not None else float(out.reshape(()))


def _path_priors(params, paths):
    """Transition log-probs after each prefix of ``paths`` (P, L).

    Returns ``(logp, steps)``: ``logp`` is log p(z_{1:L}) with z_1 uniform and
    ``steps[t]`` (P, k) is log p(z_{t+2} | z_{1:t+1}) for t = 0..L-1.
    """
    k = params.config.k
    P, L = paths.shape
    eye = np.eye(k)
    prior = params.gen.prior_logits([dn.Tensor(eye[paths[:, t]]) for t in range(L)])
    steps = [dn.log_softmax(lg).data for lg in prior]
    logp = np.full(P, -math.log(k))
    for t in range(1, L):
        logp = logp + steps[t - 1][np.arange(P), paths[:, t]]
    return logp, steps


def sample_gammas(params, sample):
    """Per-step gamma for one sample: the constant, or the gate read-out."""
    w = sample.w
    if not params.config.gated:
        return np.full(w, float(params.config.gamma))
    batch = Batch.from_samples([sample])
    dense = dense_inputs(params, batch)
    hidden = params.inf.hidden_states(dense)
    return np.array([dn.sigmoid(params.inf.gate(h)).data[0, 0] for h in hidden])


def exact_log_marginal(sample, params, config=None, basis_probs=None, form="decomposed"):
    """Log-likelihood of one sample by summing over every cluster path.

    ``form="decomposed"`` treats the transition path ``z`` and the basis
    draws ``z'`` as independent, emitting ``x_t`` from
    ``(1 - gamma_t) mu_{z_t} + gamma_t mu_{z'_t}``; the ELBO is a lower bound
    of this quantity. ``form="mixture"`` emits each ``x_t`` from the dynamic
    mixture ``psi_t(. | z_{1:t-1})``, with ``psi_1`` built from the uniform
    prior.
    """
    if config is not None:
        params.config = config
    cfg = params.config
    k, w = cfg.k, sample.w
    n_paths = k ** w
    if n_paths > MAX_PATHS:
        raise GuardError(f"k^w = {n_paths} exceeds the enumeration guard of {MAX_PATHS}")
    p = params.basis_probs if basis_probs is None else np.asarray(basis_probs, float)
    mu = params.gen.mu.data
    x = sample.filled().T
    m = sample.mask.T.astype(float)
    gammas = sample_gammas(params, sample)
    with np.errstate(divide="ignore"):
        log_p = np.log(p)

    if form == "decomposed":
        paths = np.array(list(itertools.product(range(k), repeat=w)), dtype=np.int64)
        total, _ = _path_priors(params, paths)
        for t in range(w):
            g = gammas[t]
            centres = (1.0 - g) * mu[paths[:, t]][:, None, :] + g * mu[None, :, :]
            ll = _gauss_logpdf(x[t], m[t], centres, cfg.sigma)
            total = total + _logsumexp(ll + log_p[None, :], axis=1)
        return _logsumexp(total)

    if form == "mixture":
        ll = np.stack([_gauss_logpdf(x[t], m[t], mu, cfg.sigma) for t in range(w)])
        psi1 = (1.0 - gammas[0]) / k + gammas[0] * p
        with np.errstate(divide="ignore"):
            first = _logsumexp(np.log(psi1) + ll[0])
        if w == 1:
            return float(first)
        paths = np.array(list(itertools.product(range(k), repeat=w - 1)), dtype=np.int64)
        logp, steps = _path_priors(params, paths)
        total = logp + first
        for t in range(1, w):
            g = gammas[t]
            psi = (1.0 - g) * np.exp(steps[t - 1]) + g * p[None, :]
            with np.errstate(divide="ignore"):
                total = total + _logsumexp(np.log(psi) + ll[t][None, :], axis=1)
        return _logsumexp(total)

    raise ValueError(f"unknown form {form!r}")


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def _batches(samples, size, rng=None):
    idx = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    for start in range(0, len(samples), size):
        yield Batch.from_samples([samples[i] for i in idx[start:start + size]])


def evaluate_neg_elbo(params, samples, tau, seed):
    rng = np.random.default_rng(seed)
    total = 0.0
    for batch in _batches(samples, params.config.batch_size):
        values, _, _ = elbo_terms(params, batch, tau, rng=rng)
        total -= float(values.data.sum())
    return total / len(samples)


def infer_marginals(params, samples, batch_size=256):
    """(n, w, k) inference marginals and (n, w) gamma values, no sampling noise."""
    out_m, out_g = [], []
    for batch in _batches(samples, batch_size):
        dense = dense_inputs(params, batch)
        trace = params.inf.run(dense, 1.0, noise=np.zeros((1, batch.x.shape[1]) + (
            batch.size, params.config.k)))
        out_m.append(trace.marginals().data)
        gamma = gamma_terms(params, trace, batch.size, batch.x.shape[1])
        out_g.append(gamma.data if params.config.gated else gamma)
    return np.concatenate(out_m), np.concatenate(out_g)


def estimate_params_basis(params, samples):
    M, _ = infer_marginals(params, samples)
    return M.reshape(-1, params.config.k).mean(axis=0)


@dataclass
class EpochLog:
    epoch: int
    train_neg_elbo: float
    valid_neg_elbo: float
    gate_mean: float
    lr: float


def train(train_samples, valid_samples, config, callback=None):
    """Fit a model; returns ``(params, log)`` restored to the best validation epoch."""
    if not train_samples or not valid_samples:
        raise ValueError("train and valid splits must be non-empty")
    d = train_samples[0].d
    params = ModelParams(d, config)
    log = []
    if config.epochs == 0:
        return params, log
    opt = Adam(params.parameters(), lr=config.learning_rate)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    noise_rng = np.random.default_rng(derive_seed(config.seed, "gumbel"))
    valid_seed = derive_seed(config.seed, "valid")
    best = math.inf
    best_snap = params.snapshot()
    stale = 0
    for epoch in range(config.epochs):
        tau = config.temperature(epoch)
        total, gate_sum, gate_n = 0.0, 0.0, 0
        for b, batch in enumerate(_batches(train_samples, config.batch_size, shuffle_rng), 1):
            opt.zero_grad()
            try:
                values, trace, _ = elbo_terms(params, batch, tau, rng=noise_rng)
                loss = -dn.mean(values)
                loss.backward()
                for p in params.parameters():
                    if not np.isfinite(p.grad).all():
                        raise NonFiniteError(f"gradient of {p.name}")
            except NonFiniteError as exc:
                raise DivergenceError(epoch + 1, b, str(exc)) from None
            opt.step()
            params.pre.pin_diagonal()
            total -= float(values.data.sum())
            if config.gated:
                gate_sum += float(trace.gate.data.sum())
                gate_n += trace.gate.data.size
        train_loss = total / len(train_samples)
        try:
            valid_loss = evaluate_neg_elbo(params, valid_samples, tau, valid_seed)
        except NonFiniteError as exc:
            raise DivergenceError(epoch + 1, 0, f"validation: {exc}") from None
        gate_mean = gate_sum / gate_n if config.gated else float(config.gamma)
        entry = EpochLog(epoch + 1, train_loss, valid_loss, gate_mean, config.learning_rate)
        log.append(entry)
        if callback is not None:
            callback(entry)
        if valid_loss < best:
            best = valid_loss
            best_snap = params.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    params.restore(best_snap)
    params.basis_probs = estimate_params_basis(params, train_samples)
    return params, log


def log_to_csv(log):
    lines = ["epoch,train_neg_elbo,valid_neg_elbo,gate_mean,lr"]
    for e in log:
        lines.append(f"{e.epoch},{e.train_neg_elbo!r},{e.valid_neg_elbo!r},{e.gate_mean!r},{e.lr!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def checkpoint_dict(params, extra=None):
    return {
        "version": CHECKPOINT_VERSION,
        "d": params.d,
        "config": params.config.to_dict(),
        "params": {n: {"shape": list(p.data.shape), "data": p.data.reshape(-1).tolist()}
                   for n, p in params.named().items()},
        "basis_probs": params.basis_probs.tolist(),
        "extra": extra or {},
    }


def checkpoint_save(params, path, extra=None):
    atomic_write_text(path, json.dumps(checkpoint_dict(params, extra)))


def checkpoint_from_dict(obj):
    if not isinstance(obj, dict) or "version" not in obj:
        raise CorruptCheckpointError("checkpoint has no version field")
    if obj["version"] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {obj['version']!r} does not match reader {CHECKPOINT_VERSION!r}")
    try:
        config = TrainConfig.from_dict(obj["config"])
        params = ModelParams(int(obj["d"]), config)
        stored = obj["params"]
        named = params.named()
        if set(stored) != set(named):
            raise CorruptCheckpointError("parameter names do not match the configuration")
        for name, p in named.items():
            arr = np.array(stored[name]["data"], dtype=np.float64).reshape(stored[name]["shape"])
            if arr.shape != p.data.shape:
                raise CorruptCheckpointError(f"shape mismatch for {name}")
            p.data[...] = arr
        params.basis_probs = np.array(obj["basis_probs"], dtype=np.float64)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"malformed checkpoint: {exc}") from None
    return params, obj.get("extra", {})


def checkpoint_load(path):
    """Return ``(params, extra)`` from a JSON checkpoint."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from None
    return checkpoint_from_dict(obj)
