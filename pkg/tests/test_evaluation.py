import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_acc, brute_knn, brute_pre_rec
from placededup.evaluation import (
    EvalReport,
    KnnIndex,
    UndefinedMetricError,
    acc,
    evaluate,
    knn_exact,
    precision_recall_at_k,
)
from placededup.places import LabeledPair, build_eval_sets


def _sets(pairs):
    return build_eval_sets([LabeledPair(a, b, y, "s") for a, b, y in pairs])


def random_instance(rng, n_max=50):
    """Integer coordinates so distances are exact and ties actually occur."""
    n = int(rng.integers(4, n_max + 1))
    ids = [f"p{i:02d}" for i in rng.permutation(n)]
    X = rng.integers(-3, 4, size=(n, int(rng.integers(1, 4)))).astype(np.float64)
    entity = rng.integers(0, max(1, n // 2), size=n)
    pairs = []
    for _ in range(int(rng.integers(3, 3 * n))):
        i, j = rng.choice(n, size=2, replace=False)
        pairs.append((ids[i], ids[j], int(entity[i] == entity[j])))
    return ids, X, _sets(pairs)


def test_knn_examples():
    index = KnnIndex(["a", "b", "c", "d"], [[0.0], [1.0], [-1.0], [3.0]])
    assert knn_exact(index, "a", 2) == ["b", "c"]  # tie broken by id
    assert knn_exact(index, "d", 3) == ["b", "a", "c"]
    with pytest.raises(ValueError):
        knn_exact(index, "a", 4)
    with pytest.raises(ValueError):
        knn_exact(index, "a", 0)
    with pytest.raises(KeyError):
        knn_exact(index, "zz", 1)


def test_index_validation():
    with pytest.raises(ValueError):
        KnnIndex(["a", "a"], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        KnnIndex(["a"], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        KnnIndex(["a", "b"], [[0.0], [np.nan]])


def test_acc_examples():
    index = KnnIndex(["a", "p", "n"], [[0.0], [1.0], [2.0]])
    assert acc(index, _sets([("a", "p", 1), ("a", "n", 0)])) == 1.0
    assert acc(index, _sets([("a", "n", 1), ("a", "p", 0)])) == 0.0
    tied = KnnIndex(["a", "p", "n"], [[0.0], [1.0], [-1.0]])
    assert acc(tied, _sets([("a", "p", 1), ("a", "n", 0)])) == 0.0
    with pytest.raises(UndefinedMetricError):
        acc(index, _sets([("a", "p", 1)]))


def test_pre_rec_example():
    ids = [f"x{i}" for i in range(8)]
    X = np.arange(8, dtype=np.float64)[:, None]
    index = KnnIndex(ids, X)
    sets = _sets([("x0", "x1", 1), ("x0", "x2", 1)])
    # probe x0: both duplicates in its top 5, so PRE@5 = 0.4 and REC@5 = 1
    assert np.isin(index.ranked("x0")[:5], [1, 2]).sum() == 2
    # x1 and x2 are probes too, each with one duplicate in its top 5
    pre, rec = precision_recall_at_k(index, sets, k_max=7)
    assert pre[4] == pytest.approx((0.4 + 0.2 + 0.2) / 3)
    assert rec[4] == 1.0 and rec[-1] == 1.0
    with pytest.raises(UndefinedMetricError):
        precision_recall_at_k(index, _sets([("x0", "x1", 0)]), 3)
    with pytest.raises(ValueError):
        precision_recall_at_k(index, sets, 8)


@pytest.mark.invariant
@pytest.mark.parametrize("seed", range(50))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    ids, X, sets = random_instance(rng)
    index = KnnIndex(ids, X)
    vectors = {p: X[i].tolist() for i, p in enumerate(ids)}
    dups = {a: set(m) for a, m in sets.dups.items()}
    nondups = {a: set(m) for a, m in sets.nondups.items()}
    if sets.omega:
        assert acc(index, sets) == brute_acc(vectors, dups, nondups)
    for q in ids[:5]:
        assert knn_exact(index, q, len(ids) - 1) == brute_knn(vectors, q, len(ids) - 1)
    if sets.theta:
        k_max = len(ids) - 1
        pre, rec = precision_recall_at_k(index, sets, k_max)
        bpre, brec = brute_pre_rec(vectors, dups, k_max)
        assert pre.tolist() == bpre and rec.tolist() == brec
        assert rec[-1] == 1.0
        # recall and hit counts never fall as K grows
        assert np.all(np.diff(rec) >= 0)
        assert np.all(np.diff(pre * np.arange(1, k_max + 1)) >= -1e-12)
        assert np.all((pre >= 0) & (pre <= 1) & (rec >= 0) & (rec <= 1))


@pytest.mark.invariant
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-5, 5))
def test_metrics_invariant_under_similarity(seed, scale, shift):
    rng = np.random.default_rng(seed)
    ids, X, sets = random_instance(rng, n_max=20)
    Q, _ = np.linalg.qr(rng.normal(size=(X.shape[1], X.shape[1])))
    # exact rotations aside, scaling by a power of two and shifting by an integer are exact
    Y = X * 2.0 ** round(np.log2(scale)) + round(shift)
    a, b = KnnIndex(ids, X), KnnIndex(ids, Y)
    if sets.omega:
        assert acc(a, sets) == acc(b, sets)
    if sets.theta:
        assert np.array_equal(precision_recall_at_k(a, sets, 3)[1], precision_recall_at_k(b, sets, 3)[1])
    # a random rotation only perturbs distances by rounding; break ties first
    Z = X + rng.normal(size=X.shape) * 1e-3
    R = Z @ Q
    if sets.omega:
        assert acc(KnnIndex(ids, Z), sets) == pytest.approx(acc(KnnIndex(ids, R), sets), abs=1e-12)


def test_report_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ids, X, sets = random_instance(rng)
    while not (sets.omega and sets.theta):
        ids, X, sets = random_instance(rng)
    rep = evaluate(KnnIndex(ids, X), sets, 100)
    assert len(rep.pre_at_k) == len(ids) - 1
    rep.to_json(tmp_path / "r.json", extra={"config_hash": "abc"})
    assert EvalReport.from_json(tmp_path / "r.json") == rep
    rep.to_tsv(tmp_path / "r.tsv")
    rows = (tmp_path / "r.tsv").read_text().splitlines()
    assert rows[0] == "K\tPRE@K\tREC@K" and len(rows) == len(ids)
    assert float(rows[1].split("\t")[1]) == rep.pre_at_k[0]
