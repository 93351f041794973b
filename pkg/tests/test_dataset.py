import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mixcast.dataset import (ConflictError, DatasetError, EmptyDatasetError, ForecastTask,
                             MtsSample, NormStats, ParseError, SplitSpec, corrupt, load_long_csv,
                             load_wide_csv, normalize, split, synthesize, write_long_csv)


def _write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_load_single_variable(tmp_path):
    (s,) = load_long_csv(_write(tmp_path, "sample_id,time,variable,value\ns1,1,0,2.0\ns1,2,0,3.0\n"))
    assert (s.d, s.w) == (1, 2)
    assert s.mask.tolist() == [[1, 1]]
    assert s.values.tolist() == [[2.0, 3.0]]


def test_absent_cells_are_masked(tmp_path):
    (s,) = load_long_csv(_write(tmp_path, "sample_id,time,variable,value\ns1,1,0,2.0\ns1,2,1,5.0\n"))
    assert (s.d, s.w) == (2, 2)
    assert s.mask.tolist() == [[1, 0], [0, 1]]
    assert np.isnan(s.values[0, 1]) and np.isnan(s.values[1, 0])


def test_parse_error_names_line(tmp_path):
    path = _write(tmp_path, "sample_id,time,variable,value\ns1,1,0,2.0\ns1,2,0,abc\n")
    with pytest.raises(ParseError, match="line 3"):
        load_long_csv(path)


def test_duplicate_key_conflicts(tmp_path):
    path = _write(tmp_path, "sample_id,time,variable,value\ns1,1,0,2.0\ns1,1,0,3.0\n")
    with pytest.raises(ConflictError):
        load_long_csv(path)


def test_empty_file(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_long_csv(_write(tmp_path, ""))
    with pytest.raises(EmptyDatasetError):
        load_long_csv(_write(tmp_path, "sample_id,time,variable,value\n", "h.csv"))


def test_bad_header_and_field_count(tmp_path):
    with pytest.raises(ParseError, match="line 1"):
        load_long_csv(_write(tmp_path, "id,t,v,x\ns1,1,0,2\n"))
    with pytest.raises(ParseError, match="line 2"):
        load_long_csv(_write(tmp_path, "sample_id,time,variable,value\ns1,1,0\n", "b.csv"))


def test_wide_loader(tmp_path):
    path = _write(tmp_path, "sample_id,time,a,b\ns1,1,1.0,\ns1,2,NaN,4.0\n")
    (s,) = load_wide_csv(path)
    assert s.mask.tolist() == [[1, 0], [0, 1]]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_long_csv_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(rng.integers(1, 4)):
        d, w = int(rng.integers(1, 4)), int(rng.integers(1, 6))
        mask = (rng.random((d, w)) < 0.7).astype(np.int8)
        mask[0, :] = 1  # every step and variable index appears at least once
        mask[:, 0] = 1
        samples.append(MtsSample(f"s{i}", rng.normal(size=(d, w)) * 1e3, mask,
                                 np.cumsum(rng.uniform(0.1, 2.0, w))))
    d_max = max(s.d for s in samples)
    path = str(tmp_path_factory.mktemp("rt") / "x.csv")
    write_long_csv(samples, path)
    back = load_long_csv(path, d=d_max)

    def cells(ss):
        return {(s.id, float(s.ref_times[t]), i, float(s.values[i, t]))
                for s in ss for i in range(s.d) for t in range(s.w) if s.mask[i, t]}
    assert cells(back) == cells(samples)


def _full(d=2, w=5, seed=0):
    rng = np.random.default_rng(seed)
    return MtsSample("s", rng.normal(size=(d, w)), np.ones((d, w), dtype=np.int8))


def test_corrupt_zero_is_identity():
    s = _full()
    assert corrupt(s, 0.0, 1).same_as(s)


def test_corrupt_one_masks_everything():
    assert corrupt(_full(), 1.0, 1).mask.sum() == 0


def test_corrupt_exact_count_and_determinism():
    s = _full(d=2, w=5)
    a, b = corrupt(s, 0.6, 7), corrupt(s, 0.6, 7)
    assert s.n_observed - a.n_observed == 6
    assert a.same_as(b)
    assert s.n_observed == 10  # original untouched


def test_corrupt_rejects_out_of_range():
    with pytest.raises(ValueError):
        corrupt(_full(), 1.5, 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_corrupt_only_removes(seed, delta):
    rng = np.random.default_rng(seed)
    s = MtsSample("s", rng.normal(size=(3, 6)), (rng.random((3, 6)) < 0.6).astype(np.int8))
    c = corrupt(s, delta, seed)
    assert not ((c.mask == 1) & (s.mask == 0)).any()
    keep = c.mask == 1
    assert np.array_equal(c.values[keep], s.values[keep])
    assert np.isnan(c.values[c.mask == 0]).all()
    assert s.n_observed - c.n_observed == round(delta * s.n_observed)


def test_split_sizes_and_determinism():
    samples = [_full(seed=i) for i in range(10)]
    tr, va, te = split(samples, SplitSpec(0.7, 0.1, 0.2, seed=3))
    assert (len(tr), len(va), len(te)) == (7, 1, 2)
    again = split(samples, SplitSpec(0.7, 0.1, 0.2, seed=3))
    assert [id(s) for part in (tr, va, te) for s in part] == [id(s) for part in again for s in part]
    assert sorted(id(s) for part in (tr, va, te) for s in part) == sorted(map(id, samples))


def test_split_single_sample_goes_to_train():
    tr, va, te = split([_full()], SplitSpec())
    assert (len(tr), len(va), len(te)) == (1, 0, 0)


def test_split_spec_validation():
    with pytest.raises(DatasetError):
        SplitSpec(0.5, 0.5, 0.5)


def test_normalize_arithmetic_and_guard():
    stats = NormStats(np.array([5.0, 3.0]), np.array([2.0, 0.0]))
    s = MtsSample("s", [[9.0, 0.0], [4.0, 1.0]], [[1, 0], [1, 1]])
    (n,) = normalize([s], stats)
    assert n.values[0, 0] == 2.0
    assert np.isnan(n.values[0, 1])
    assert n.values[1].tolist() == [1.0, -2.0]


def test_norm_stats_from_observed_entries_only():
    s = MtsSample("s", [[1.0, 3.0, 1e9]], [[1, 1, 0]])
    st_ = NormStats.from_samples([s])
    assert st_.mean[0] == 2.0 and st_.std[0] == 1.0


def test_forecast_task_contract():
    with pytest.raises(DatasetError):
        ForecastTask(0, 1)
    with pytest.raises(DatasetError):
        ForecastTask(4, 3).check(_full(w=5))
    prefix, target = ForecastTask(3, 2).split_sample(_full(w=5))
    assert (prefix.w, target.w) == (3, 2)


def test_sample_invariants():
    with pytest.raises(DatasetError):
        MtsSample("s", np.ones((2, 3)), np.ones((2, 2)))
    with pytest.raises(DatasetError):
        MtsSample("s", [[np.nan]], [[1]])
    with pytest.raises(DatasetError):
        MtsSample("s", [[1.0, 2.0]], [[1, 1]], ref_times=[2.0, 1.0])


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def test_synthesize_single_component_mean():
    sigma, n, w, d = 4.0, 400, 10, 3
    samples, truth = synthesize(1, d, w, n, sigma, 0.3, seed=5)
    x = np.stack([s.values for s in samples])
    est = x.mean(axis=(0, 2))
    assert np.all(np.abs(est - truth.means[0]) < 3 * sigma ** -0.5 / np.sqrt(n * w))


def test_synthesize_vanishing_noise():
    samples, truth = synthesize(2, 2, 8, 50, 1e6, 0.4, seed=2, min_dist=1.0)
    for s in samples:
        dist = np.linalg.norm(s.values.T[:, None, :] - truth.means[None], axis=-1).min(axis=1)
        assert (dist < 0.01).all()


def test_synthesize_absorbing_path():
    samples, truth = synthesize(2, 1, 30, 20, 1e4, 0.0, seed=3, transition=np.eye(2), z1=1)
    assert (truth.paths == 1).all()
    assert (truth.transition_paths == 1).all()


def test_synthesize_reproducible_and_json(tmp_path):
    a, ta = synthesize(3, 2, 6, 10, 10.0, 0.1, seed=11, delta=0.2)
    b, tb = synthesize(3, 2, 6, 10, 10.0, 0.1, seed=11, delta=0.2)
    assert all(x.same_as(y) for x, y in zip(a, b))
    assert ta.to_json() == tb.to_json()
    ta.dump(tmp_path / "t.json")
    obj = json.loads((tmp_path / "t.json").read_text())
    assert set(obj) >= {"means", "transition", "basis_probs", "paths"}
    assert np.array(obj["paths"]).shape == (10, 6)


def test_synthesize_rejects_bad_sigma():
    with pytest.raises(ValueError):
        synthesize(2, 2, 5, 5, 0.0, 0.1, seed=0)


def test_first_cluster_uniform_chi_square():
    k, n = 4, 10000
    _, truth = synthesize(k, 1, 1, n, 1.0, 0.0, seed=21)
    counts = np.bincount(truth.transition_paths[:, 0], minlength=k)
    assert stats.chisquare(counts).pvalue > 0.01
