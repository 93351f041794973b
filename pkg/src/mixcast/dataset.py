"""Sparse MTS samples: loading, corruption, splitting, normalisation, synthesis."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

MISSING = np.nan


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConflictError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


@dataclass(frozen=True, eq=False)
class MtsSample:
    """One multivariate series: ``values`` and ``mask`` are (d, w)."""

    id: str
    values: np.ndarray
    mask: np.ndarray
    ref_times: np.ndarray = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.mask, dtype=np.int8)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DatasetError(f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        d, w = values.shape
        if d < 1 or w < 1:
            raise DatasetError("need d >= 1 and w >= 1")
        if not np.isin(mask, (0, 1)).all():
            raise DatasetError("mask entries must be 0 or 1")
        if not np.isfinite(values[mask == 1]).all():
            raise DatasetError("observed entries must be finite")
        values[mask == 0] = MISSING
        times = np.arange(1, w + 1, dtype=np.float64) if self.ref_times is None else np.array(
            self.ref_times, dtype=np.float64)
        if times.shape != (w,) or (w > 1 and not np.all(np.diff(times) > 0)):
            raise DatasetError("ref_times must be strictly increasing with one entry per step")
        for arr in (values, mask, times):
            arr.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "ref_times", times)

    @property
    def d(self):
        return self.values.shape[0]

    @property
    def w(self):
        return self.values.shape[1]

    @property
    def n_observed(self):
        return int(self.mask.sum())

    def filled(self, fill=0.0):
        """Values with masked entries replaced by ``fill`` (never reads the placeholder)."""
        return np.where(self.mask == 1, np.nan_to_num(self.values, nan=0.0), fill)

    def window(self, start, length):
        stop = start + length
        if start < 0 or stop > self.w:
            raise DatasetError(f"window [{start}, {stop}) outside series of length {self.w}")
        return MtsSample(self.id, self.values[:, start:stop], self.mask[:, start:stop],
                         self.ref_times[start:stop])

    def with_mask(self, mask, values=None):
        return MtsSample(self.id, self.values if values is None else values, mask, self.ref_times)

    def same_as(self, other):
        return (self.id == other.id and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.values, other.values, equal_nan=True)
                and np.array_equal(self.ref_times, other.ref_times))


@dataclass(frozen=True)
class ForecastTask:
    window: int
    horizon: int

    def __post_init__(self):
        if self.window < 1 or self.horizon < 1:
            raise DatasetError("window and horizon must be >= 1")

    def check(self, sample):
        if self.window + self.horizon > sample.w:
            raise DatasetError(
                f"window {self.window} + horizon {self.horizon} exceeds sample length {sample.w}")

    def split_sample(self, sample):
        self.check(sample)
        return sample.window(0, self.window), sample.window(self.window, self.horizon)


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    valid_frac: float = 0.1
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.valid_frac, self.test_frac)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise DatasetError(f"split fractions {fr} must be non-negative and sum to 1")


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_samples(cls, samples):
        """Per-variable stats over observed entries of ``samples`` (the train split)."""
        d = samples[0].d
        total = np.zeros(d)
        sq = np.zeros(d)
        count = np.zeros(d)
        for s in samples:
            x = s.filled()
            total += x.sum(axis=1)
            sq += (x * x).sum(axis=1)
            count += s.mask.sum(axis=1)
        safe = np.maximum(count, 1)
        mean = np.where(count > 0, total / safe, 0.0)
        var = np.where(count > 0, sq / safe - mean ** 2, 0.0)
        return cls(mean, np.sqrt(np.maximum(var, 0.0)))

    @property
    def scale(self):
        return np.where(self.std > 0, self.std, 1.0)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, obj):
        return cls(np.array(obj["mean"], float), np.array(obj["std"], float))


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

LONG_HEADER = ["sample_id", "time", "variable", "value"]


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        raise EmptyDatasetError(f"{path} is empty")
    return list(csv.reader(io.StringIO(text)))


def load_long_csv(path, d=None):
    """Read ``sample_id,time,variable,value`` rows into one sample per id.

    Cells absent from the file, or with an empty / non-finite value, are
    masked. ``d`` defaults to one more than the largest variable index seen.
    """
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    if header != LONG_HEADER:
        raise ParseError(1, f"expected header {','.join(LONG_HEADER)}, got {','.join(header)}")
    cells = {}
    order = []
    seen_ids = set()
    max_var = -1
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ParseError(lineno, f"expected 4 fields, got {len(row)}")
        sid, t_raw, v_raw, x_raw = (c.strip() for c in row)
        try:
            t = float(t_raw)
            var = int(v_raw)
            x = float(x_raw) if x_raw not in ("", "nan", "NaN", "NA") else math.nan
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if var < 0 or (d is not None and var >= d):
            raise ParseError(lineno, f"variable index {var} out of range")
        if not math.isfinite(t):
            raise ParseError(lineno, "time must be finite")
        key = (sid, t, var)
        if key in cells:
            raise ConflictError(f"line {lineno}: duplicate entry for sample {sid!r}, "
                                f"time {t_raw}, variable {var}")
        if sid not in seen_ids:
            seen_ids.add(sid)
            order.append(sid)
        cells[key] = x
        max_var = max(max_var, var)
    if not cells:
        raise EmptyDatasetError(f"{path} has no data rows")
    d = max_var + 1 if d is None else d
    by_sample = {}
    for (sid, t, var), x in cells.items():
        by_sample.setdefault(sid, []).append((t, var, x))
    samples = []
    for sid in order:
        entries = by_sample[sid]
        times = sorted({t for t, _, _ in entries})
        col = {t: i for i, t in enumerate(times)}
        values = np.full((d, len(times)), MISSING)
        mask = np.zeros((d, len(times)), dtype=np.int8)
        for t, var, x in entries:
            if math.isfinite(x):
                values[var, col[t]] = x
                mask[var, col[t]] = 1
        samples.append(MtsSample(sid, values, mask, np.array(times)))
    return samples


def load_wide_csv(path):
    """Read ``sample_id,time,v0,...`` rows; empty or NaN cells are masked."""
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["sample_id", "time"] or len(header) < 3:
        raise ParseError(1, "expected header sample_id,time,<variables...>")
    d = len(header) - 2
    grouped = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 2:
            raise ParseError(lineno, f"expected {d + 2} fields, got {len(row)}")
        try:
            t = float(row[1])
            xs = [float(c) if c.strip() not in ("", "NA") else math.nan for c in row[2:]]
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        steps = grouped.setdefault(row[0].strip(), {})
        if t in steps:
            raise ConflictError(f"line {lineno}: duplicate time {row[1]} for sample {row[0]!r}")
        steps[t] = xs
    if not grouped:
        raise EmptyDatasetError(f"{path} has no data rows")
    samples = []
    for sid, steps in grouped.items():
        times = sorted(steps)
        vals = np.array([steps[t] for t in times], dtype=float).T
        mask = np.isfinite(vals).astype(np.int8)
        samples.append(MtsSample(sid, vals, mask, np.array(times)))
    return samples


def _fmt_time(t):
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def write_long_csv(samples, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LONG_HEADER)
        for s in samples:
            for t_idx in range(s.w):
                for var in range(s.d):
                    if s.mask[var, t_idx]:
                        writer.writerow([s.id, _fmt_time(s.ref_times[t_idx]), var,
                                         repr(float(s.values[var, t_idx]))])


# ---------------------------------------------------------------------------
# Transformations
# ---------------------------------------------------------------------------

def corrupt(sample, delta, seed):
    """Mask exactly ``round(delta * n_observed)`` observed entries, chosen uniformly."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    obs = np.flatnonzero(sample.mask.reshape(-1))
    n_drop = int(round(delta * obs.size))
    if n_drop == 0:
        return sample
    rng = np.random.default_rng(seed)
    drop = rng.choice(obs, size=n_drop, replace=False)
    mask = sample.mask.copy().reshape(-1)
    mask[drop] = 0
    return sample.with_mask(mask.reshape(sample.mask.shape))


def corrupt_all(samples, delta, seed):
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=len(samples))
    return [corrupt(s, delta, int(sd)) for s, sd in zip(samples, seeds)]


def split(samples, spec):
    """Seeded shuffle into train/valid/test; flooring remainders go to train."""
    if not samples:
        raise EmptyDatasetError("cannot split an empty sample list")
    n = len(samples)
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_valid = int(math.floor(spec.valid_frac * n + 1e-9))
    n_test = int(math.floor(spec.test_frac * n + 1e-9))
    n_train = n - n_valid - n_test
    train = [samples[i] for i in perm[:n_train]]
    valid = [samples[i] for i in perm[n_train:n_train + n_valid]]
    test = [samples[i] for i in perm[n_train + n_valid:]]
    return train, valid, test


def normalize(samples, stats):
    scale = stats.scale
    out = []
    for s in samples:
        vals = (s.values - stats.mean[:, None]) / scale[:, None]
        out.append(MtsSample(s.id, np.where(s.mask == 1, vals, MISSING), s.mask, s.ref_times))
    return out


def denormalize_values(values, stats):
    """Map a (d, r) array of z-scored predictions back to data units."""
    return values * stats.scale[:, None] + stats.mean[:, None]


def windows(sample, length, stride=None):
    """Fixed-length windows over one series."""
    stride = length if stride is None else stride
    if length > sample.w:
        return []
    return [MtsSample(f"{sample.id}@{start}", sample.values[:, start:start + length],
                      sample.mask[:, start:start + length], sample.ref_times[start:start + length])
            for start in range(0, sample.w - length + 1, stride)]


def to_batch(samples):
    """Stack equal-length samples as ``(x, m, times)`` arrays of shape (B, d, w)."""
    w = samples[0].w
    if any(s.w != w or s.d != samples[0].d for s in samples):
        raise DatasetError("batched samples must share d and w")
    x = np.stack([s.filled() for s in samples])
    m = np.stack([s.mask for s in samples]).astype(np.float64)
    times = np.stack([s.ref_times for s in samples])
    return x, m, times


# ---------------------------------------------------------------------------
# Synthetic data from the generative process
# ---------------------------------------------------------------------------

@dataclass
class GroundTruth:
    means: np.ndarray
    transition: np.ndarray
    basis_probs: np.ndarray
    paths: np.ndarray
    transition_paths: np.ndarray = field(default=None)

    def to_json(self):
        return {
            "means": self.means.tolist(),
            "transition": self.transition.tolist(),
            "basis_probs": self.basis_probs.tolist(),
            "paths": self.paths.tolist(),
            "transition_paths": self.transition_paths.tolist(),
        }

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)


def separated_means(k, d, rng, scale=2.0, min_dist=1.0, tries=1000):
    for _ in range(tries):
        mu = rng.normal(0.0, scale, size=(k, d))
        if k == 1:
            return mu
        diff = mu[:, None, :] - mu[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        if dist[~np.eye(k, dtype=bool)].min() >= min_dist:
            return mu
    raise DatasetError(f"could not place {k} means {min_dist} apart in {d} dimensions")


def random_transition(k, rng, stickiness=0.9):
    """Rows put ``stickiness`` on one successor (a random permutation), rest Dirichlet."""
    perm = rng.permutation(k)
    A = (1.0 - stickiness) * rng.dirichlet(np.ones(k), size=k)
    A[np.arange(k), perm] += stickiness
    return A / A.sum(axis=1, keepdims=True)


def synthesize(k, d, w, n, sigma, gamma, seed, *, means=None, transition=None,
               basis_probs=None, z1=None, delta=0.0, mean_scale=2.0, min_dist=1.0,
               stickiness=0.9):
    """Draw ``n`` series by ancestral sampling with a fixed Markov transition.

    Step 1 draws ``z_1`` uniformly; for every later step the transition state
    ``z_{t+1}`` is drawn from ``transition[z_t]`` and the emission state from
    ``(1-gamma) * transition[z_t] + gamma * basis_probs``. The first emission
    uses ``(1-gamma) * onehot(z_1) + gamma * basis_probs``. Observations are
    ``N(means[emission state], I / sigma)``. ``delta`` > 0 masks that fraction
    of entries per sample via :func:`corrupt`.
    """
    if min(k, d, w, n) < 1:
        raise ValueError("k, d, w and n must be >= 1")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    mu = separated_means(k, d, rng, mean_scale, min_dist) if means is None else np.asarray(means, float)
    A = random_transition(k, rng, stickiness) if transition is None else np.asarray(transition, float)
    p = np.full(k, 1.0 / k) if basis_probs is None else np.asarray(basis_probs, float)
    if mu.shape != (k, d) or A.shape != (k, k) or p.shape != (k,):
        raise ValueError("ground-truth shapes do not match k and d")
    noise_sd = 1.0 / math.sqrt(sigma)

    zpath = np.empty((n, w), dtype=np.int64)
    epath = np.empty((n, w), dtype=np.int64)
    samples = []
    corrupt_seeds = rng.integers(0, 2**63 - 1, size=n)
    for s in range(n):
        z = rng.integers(k) if z1 is None else int(z1)
        zpath[s, 0] = z
        psi = gamma * p
        psi[z] += 1.0 - gamma
        epath[s, 0] = rng.choice(k, p=psi)
        for t in range(1, w):
            trans = A[zpath[s, t - 1]]
            zpath[s, t] = rng.choice(k, p=trans)
            epath[s, t] = rng.choice(k, p=(1.0 - gamma) * trans + gamma * p)
        x = mu[epath[s]] + noise_sd * rng.standard_normal((w, d))
        sample = MtsSample(f"s{s}", x.T, np.ones((d, w), dtype=np.int8))
        if delta > 0:
            sample = corrupt(sample, delta, int(corrupt_seeds[s]))
        samples.append(sample)
    truth = GroundTruth(mu, A, p, epath, zpath)
    return samples, truth
