import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from revealkit.sampling import (FeatureRecord, class_roles, k_nearest, load_records, rebalance_ratio,
                                save_records, smote)


def _records(X, y):
    return [FeatureRecord(f"r{i}", np.asarray(x, dtype=float), int(c), "p") for i, (x, c) in enumerate(zip(X, y))]


def _counts(recs):
    n1 = sum(r.label for r in recs)
    return len(recs) - n1, n1


def _is_convex_combination(point, source, minority, tol=1e-9):
    """Is ``point`` on an open segment from ``source`` to some other original?"""
    for n in minority:
        d = n - source
        dd = d @ d
        if dd == 0:
            continue
        lam = (point - source) @ d / dd
        if np.linalg.norm(source + lam * d - point) < tol and 0 < lam < 1:
            return True
    return False


def check_smote_contract(recs, out, m):
    major, minor = class_roles(recs)
    n_major = sum(1 for r in recs if r.label == major)
    counts = {0: 0, 1: 0}
    for r in out:
        counts[r.label] += 1
    assert counts[minor] == m
    assert counts[major] == min(n_major, m)
    originals = {r.id: r for r in recs}
    orig_minor = [r for r in recs if r.label == minor]
    out_ids = {r.id for r in out}
    assert all(r.id in out_ids for r in orig_minor), "an original minority record was dropped"
    minority_X = [r.features for r in orig_minor]
    for r in out:
        if not r.synthetic:
            assert r.id in originals and np.array_equal(r.features, originals[r.id].features)
            continue
        assert r.label == minor
        src = originals[r.id.split("#smote")[0]]
        assert src.label == minor
        assert _is_convex_combination(r.features, src.features, minority_X)


def test_contract_on_500_random_datasets():
    master = np.random.default_rng(2024)
    for trial in range(500):
        n_min = int(master.integers(2, 12))
        n_maj = int(master.integers(n_min, 40))
        dim = int(master.integers(1, 6))
        X = master.normal(size=(n_min + n_maj, dim))
        y = np.array([1] * n_min + [0] * n_maj)
        master.shuffle(y)
        if n_min == n_maj:
            y[:] = [1] * n_min + [0] * n_maj
        recs = _records(X, y)
        m = int(master.integers(n_min, n_maj + 10))
        k = int(master.integers(1, 7))
        out = smote(recs, k=k, m=m, seed=trial)
        check_smote_contract(recs, out, m)


@given(n_min=st.integers(2, 8), extra=st.integers(0, 20), m_extra=st.integers(0, 25),
       k=st.integers(1, 6), seed=st.integers(0, 2**31))
@settings(max_examples=60)
def test_contract_property(n_min, extra, m_extra, k, seed):
    rng = np.random.default_rng(seed)
    n_maj = n_min + extra
    recs = _records(rng.normal(size=(n_min + n_maj, 3)), [1] * n_min + [0] * n_maj)
    out = smote(recs, k=k, m=n_min + m_extra, seed=seed)
    check_smote_contract(recs, out, n_min + m_extra)


def test_balanced_input_is_unchanged():
    recs = _records(np.arange(8).reshape(4, 2), [0, 1, 0, 1])
    assert smote(recs, k=2, m=2) == recs


def test_two_point_minority_segment():
    recs = _records([[0, 0], [1, 1], [5, 0], [6, 0], [7, 0], [8, 0]], [1, 1, 0, 0, 0, 0])
    out = smote(recs, k=1, m=4, seed=3)
    synth = [r for r in out if r.synthetic]
    assert len(synth) == 2
    for r in synth:
        x, y = r.features
        assert abs(x - y) < 1e-12 and 0 < x < 1


def test_undersample_only():
    recs = _records(np.random.default_rng(0).normal(size=(14, 2)), [0] * 10 + [1] * 4)
    out = smote(recs, k=3, m=4, seed=0)
    assert _counts(out) == (4, 4)
    assert not any(r.synthetic for r in out)


def test_majority_defaults_to_full_balance():
    recs = _records(np.random.default_rng(0).normal(size=(13, 2)), [0] * 10 + [1] * 3)
    assert _counts(smote(recs, k=2)) == (10, 10)


def test_deterministic_per_seed():
    recs = _records(np.random.default_rng(0).normal(size=(20, 3)), [0] * 15 + [1] * 5)
    a, b = smote(recs, m=12, seed=4), smote(recs, m=12, seed=4)
    assert [r.id for r in a] == [r.id for r in b]
    assert all(np.array_equal(p.features, q.features) for p, q in zip(a, b))


def test_errors():
    one_class = _records(np.zeros((3, 2)), [0, 0, 0])
    with pytest.raises(ValueError, match="both classes"):
        smote(one_class)
    singleton = _records(np.arange(8).reshape(4, 2), [0, 0, 0, 1])
    with pytest.raises(ValueError, match="cannot interpolate a singleton class"):
        smote(singleton, m=3)
    with pytest.raises(ValueError, match="below the minority"):
        smote(_records(np.arange(12).reshape(6, 2), [0, 0, 0, 1, 1, 1]), m=2)


def test_majority_label_one():
    recs = _records(np.random.default_rng(1).normal(size=(9, 2)), [1] * 6 + [0] * 3)
    out = smote(recs, k=2, m=5, seed=0)
    assert _counts(out) == (5, 5)
    assert all(r.label == 0 for r in out if r.synthetic)


def test_k_nearest_ties_by_index():
    X = np.array([[0.0], [1.0], [-1.0], [2.0]])
    assert list(k_nearest(X, 0, 2)) == [1, 2]


def test_rebalance_ratio_counts():
    rng = np.random.default_rng(0)
    recs = _records(rng.normal(size=(1100, 2)), [0] * 1000 + [1] * 100)
    assert _counts(rebalance_ratio(recs, 5, seed=1)) == (500, 500)
    assert _counts(rebalance_ratio(recs, 1, seed=1)) == (100, 100)
    assert _counts(rebalance_ratio(recs, 50, seed=1)) == (1000, 1000)
    with pytest.raises(ValueError):
        rebalance_ratio(recs, 0.5)


def test_records_round_trip(tmp_path):
    recs = _records(np.random.default_rng(0).normal(size=(3, 4)), [0, 1, 0])
    p = tmp_path / "f.jsonl"
    save_records(recs, p)
    back = load_records(p)
    assert [r.id for r in back] == [r.id for r in recs]
    assert all(np.array_equal(a.features, b.features) for a, b in zip(recs, back))


def test_records_inconsistent_width(tmp_path):
    p = tmp_path / "f.jsonl"
    save_records(_records([[1.0, 2.0]], [0]) + [FeatureRecord("x", np.zeros(3), 1)], p)
    with pytest.raises(ValueError, match="inconsistent"):
        load_records(p)
