"""Forecasting, scoring, naive baselines and the evaluation protocols."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from ._io import derive_seed
from .dataset import corrupt, corrupt_all
from .generative import TransitionState, forecast_rollout
from .trainer import Batch, dense_inputs, infer_marginals, train

METRICS_HEADER = ["dataset", "model", "delta", "seed", "rmse", "mae", "n_scored"]
FORECAST_HEADER = ["sample_id", "t", "variable", "prediction"]
CLUSTER_HEADER = ["sample_id", "t", "argmax_z", "prob"]


class UndefinedMetricsError(ValueError):
    pass


@dataclass
class ForecastResult:
    predictions: np.ndarray
    psi_path: np.ndarray


@dataclass
class MetricReport:
    rmse: float
    mae: float
    n_scored: int


def score(predictions, targets, mask):
    """Pooled RMSE and MAE over entries with ``mask == 1``."""
    predictions = np.asarray(predictions, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if predictions.shape != mask.shape or np.shape(targets) != mask.shape:
        raise ValueError("predictions, targets and mask must share a shape")
    n = int(mask.sum())
    if n == 0:
        raise UndefinedMetricsError("no observed target entries to score")
    err = np.where(mask, predictions - np.where(mask, targets, 0.0), 0.0)
    return MetricReport(math.sqrt(float((err * err).sum()) / n), float(np.abs(err).sum()) / n, n)


def _model_state(params, prefixes):
    """Inference marginals and the generative state seeded from them."""
    M, gammas = infer_marginals(params, prefixes)
    n, w, _ = M.shape
    hidden = params.gen.filter_state([M[:, t] for t in range(w - 1)], n)
    return TransitionState(hidden, M[:, -1]), gammas[:, -1], M


def forecast_batch(params, prefixes, r):
    """Predictions (n, d, r) and psi paths (n, r, k) for equal-length prefixes."""
    if r < 1:
        raise ValueError("horizon must be >= 1")
    state, gamma_w, _ = _model_state(params, prefixes)
    gamma = gamma_w if params.config.gated else float(params.config.gamma)
    psi, xhat = forecast_rollout(state, params.gen, params.basis, gamma, r)
    return xhat.transpose(0, 2, 1), psi


def forecast(params, prefix, r):
    """Posterior-mean forecast of ``r`` steps after one observed prefix."""
    preds, psi = forecast_batch(params, [prefix], r)
    return ForecastResult(preds[0], psi[0])


def baselines(prefix, r):
    """Per-variable observed mean and last observation, each repeated ``r`` times."""
    x = prefix.filled()
    m = prefix.mask.astype(bool)
    counts = m.sum(axis=1)
    mean = np.where(counts > 0, x.sum(axis=1) / np.maximum(counts, 1), 0.0)
    last = np.zeros(prefix.d)
    for i in range(prefix.d):
        obs = np.flatnonzero(m[i])
        if obs.size:
            last[i] = x[i, obs[-1]]
    return {"mean": np.repeat(mean[:, None], r, axis=1),
            "locf": np.repeat(last[:, None], r, axis=1)}


def _split_all(samples, task):
    pairs = [task.split_sample(s) for s in samples]
    return [p for p, _ in pairs], [t for _, t in pairs]


def evaluate(params, samples, task):
    """Pooled horizon metrics for the model and both baselines."""
    prefixes, targets = _split_all(samples, task)
    preds, _ = forecast_batch(params, prefixes, task.horizon)
    truth = np.stack([t.filled() for t in targets])
    mask = np.stack([t.mask for t in targets])
    base = [baselines(p, task.horizon) for p in prefixes]
    return {
        "model": score(preds, truth, mask),
        "mean": score(np.stack([b["mean"] for b in base]), truth, mask),
        "locf": score(np.stack([b["locf"] for b in base]), truth, mask),
    }


def imputation_eval(params, samples, hold_out_frac, seed):
    """Hide a fraction of observed entries and score both reconstructions there.

    Before: the pre-imputation layer's fill. After: the inference-marginal
    mixture mean ``sum_r q(z_t = r) mu_r``.
    """
    if not 0.0 < hold_out_frac < 1.0:
        raise ValueError("hold_out_frac must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    hidden = [corrupt(s, hold_out_frac, int(rng.integers(2**63 - 1))) for s in samples]
    held = np.stack([(s.mask == 1) & (h.mask == 0) for s, h in zip(samples, hidden)])
    truth = np.stack([s.filled() for s in samples])
    dense = dense_inputs(params, Batch.from_samples(hidden)).data.transpose(0, 2, 1)
    M, _ = infer_marginals(params, hidden)
    recon = (M @ params.gen.mu.data).transpose(0, 2, 1)
    return score(dense, truth, held).rmse, score(recon, truth, held).rmse


def corrupt_prefixes(samples, window, delta, seed):
    """Corrupt only the first ``window`` steps; horizon targets stay intact."""
    out = []
    for s, sub in zip(samples, np.random.default_rng(seed).integers(0, 2**63 - 1, len(samples))):
        head = corrupt(s.window(0, window), delta, int(sub))
        out.append(s.with_mask(np.concatenate([head.mask, s.mask[:, window:]], axis=1)))
    return out


def robustness_sweep(config, splits, deltas, seeds, task, dataset="synthetic",
                     model="mixcast", with_baseline=False):
    """Retrain and score per (delta, seed).

    Train and valid samples lose a ``delta`` fraction of their observed
    entries; test samples lose the same fraction inside the forecast window
    only, so every cell is scored against the same horizon targets.
    """
    train_s, valid_s, test_s = splits
    rows = []
    for delta in deltas:
        if not 0.0 <= delta < 1.0:
            raise ValueError(f"delta {delta} outside [0, 1)")
        for seed in seeds:
            tr = corrupt_all(train_s, delta, derive_seed(seed, f"corrupt-train-{delta!r}"))
            va = corrupt_all(valid_s, delta, derive_seed(seed, f"corrupt-valid-{delta!r}"))
            te = corrupt_prefixes(test_s, task.window, delta,
                                  derive_seed(seed, f"corrupt-test-{delta!r}"))
            params, _ = train(tr, va, replace(config, seed=seed))
            reports = evaluate(params, te, task)
            names = [model, "mean"] if with_baseline else [model]
            for name in names:
                rep = reports["model" if name == model else name]
                rows.append({"dataset": dataset, "model": name, "delta": delta, "seed": seed,
                             "rmse": rep.rmse, "mae": rep.mae, "n_scored": rep.n_scored})
    return rows


# ---------------------------------------------------------------------------
# CSV rendering
# ---------------------------------------------------------------------------

def _render(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def metrics_csv(rows):
    return _render(METRICS_HEADER, [[r[h] for h in METRICS_HEADER] for r in rows])


def forecast_csv(ids, predictions, start_times):
    """``predictions`` is (n, d, r); time stamps continue from ``start_times``."""
    rows = []
    for sid, pred, t0 in zip(ids, predictions, start_times):
        for j in range(pred.shape[1]):
            for i in range(pred.shape[0]):
                rows.append([sid, t0 + j, i, repr(float(pred[i, j]))])
    return _render(FORECAST_HEADER, rows)


def clusters_csv(ids, marginals):
    """Arg-max cluster and its probability for every step of every sample."""
    rows = []
    for sid, M in zip(ids, marginals):
        for t, row in enumerate(M, start=1):
            z = int(np.argmax(row))
            rows.append([sid, t, z, repr(float(row[z]))])
    return _render(CLUSTER_HEADER, rows)
